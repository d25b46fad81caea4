"""Stage orchestration: assessment, perceived-ambiguity detection,
clarification labeling, and the selection/balancing that feeds training-set
export.

Stage 1 partitions a dataset by whether the model already handles each
sample (categories 1 and 3 are correct; 2, 4 and 5 are incorrect; backend
failures are excluded as errored). Stage 2 lets the model rewrite each
incorrect query more specifically and measures the average-entropy drop;
rewrites whose gain strictly exceeds epsilon mark the query as perceived
ambiguous. Stage 3 attaches a clarification-request label, either one of the
six canonical phrases or a model-generated request naming the ambiguity.
Selection then balances the correct and ambiguous halves to equal size.

All randomness is derived per (master seed, purpose, sample id), so runs are
byte-reproducible and insensitive to dataset growth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .backend import Backend, GenerationParams, bounded_map
from .corpus import PromptTemplate, QASample, trim_continuation
from .entropy import TruncationMode, Verdict, classify, entropy_profile, info_gain, token_entropy
from .errors import BackendError, ConfigurationError, DataIntegrityError, ParseError
from .evalkit import categorize, is_clarification
from .jsonio import read_jsonl, write_jsonl_atomic
from .phrases import FIXED_CLARIFICATIONS
from .seeding import derive_seed, rng_for

EMPTY_DISAMBIGUATION_FLAG = "empty_disambiguation"
FALLBACK_FIXED_FLAG = "fallback_fixed"


class LabelKind(enum.Enum):
    FIXED = "fixed"
    GENERATED = "generated"


class SelectionStrategy(enum.Enum):
    """How the ambiguous half of the training set is chosen."""

    APA_INFOGAIN = "apa_infogain"
    GT_RANDOM = "gt_random"
    GT_MAX_INFOGAIN = "gt_max_infogain"
    GT_MIN_INFOGAIN = "gt_min_infogain"
    ANSWER_ENTROPY = "answer_entropy"
    PLAIN_RANDOM = "plain_random"


@dataclass(frozen=True)
class AssessedSample:
    """Stage-1 outcome for one sample."""

    sample: QASample
    prediction: str
    category: int
    answer_entropy: float | None = None


@dataclass(frozen=True)
class StageOnePartition:
    """Correct/incorrect split of a dataset, with errored samples set aside."""

    correct: tuple[AssessedSample, ...]
    incorrect: tuple[AssessedSample, ...]
    errored: tuple[tuple[str, str], ...] = ()

    @property
    def categories(self) -> dict[str, int]:
        return {a.sample.id: a.category for a in self.correct + self.incorrect}

    def assessed_by_id(self) -> dict[str, AssessedSample]:
        return {a.sample.id: a for a in self.correct + self.incorrect}


@dataclass(frozen=True)
class DisambiguationRecord:
    """Stage-2 outcome: the rewrite, both entropies, and the verdict."""

    sample_id: str
    query_text: str
    disambig_text: str
    h_query: float
    h_disambig: float
    info_gain: float
    verdict: Verdict
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if abs(self.info_gain - (self.h_query - self.h_disambig)) > 1e-12:
            raise DataIntegrityError(
                f"record {self.sample_id}: info_gain {self.info_gain!r} != "
                f"h_query - h_disambig"
            )


@dataclass(frozen=True)
class ClarifyLabel:
    """Stage-3 training label for one ambiguous sample."""

    sample_id: str
    text: str
    kind: LabelKind
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text:
            raise DataIntegrityError(f"label for {self.sample_id}: empty text")
        if self.kind is LabelKind.FIXED and self.text not in FIXED_CLARIFICATIONS:
            raise DataIntegrityError(
                f"label for {self.sample_id}: fixed label is not canonical"
            )


@dataclass(frozen=True)
class Selection:
    """Balanced halves feeding the training-set export."""

    correct: tuple[AssessedSample, ...]
    ambiguous: tuple[DisambiguationRecord, ...]
    strategy: SelectionStrategy
    epsilon: float


# -- stage 1 -----------------------------------------------------------------


def _mean_generation_entropy(tokens, mode: TruncationMode) -> float | None:
    if not tokens:
        return None
    return math.fsum(token_entropy(t, mode) for t in tokens) / len(tokens)


def stage1_assess(
    samples: Sequence[QASample],
    backend: Backend,
    templates: Mapping[str, PromptTemplate],
    params: GenerationParams,
    *,
    mode: TruncationMode,
    rouge_threshold: float = 0.3,
) -> StageOnePartition:
    """Greedy-answer every sample and split by the five-outcome rule.

    The average token entropy of each generated answer is kept alongside, so
    the answer-entropy selection strategy needs no second pass.
    """
    template = templates["direct"]

    def one(sample: QASample):
        try:
            result = backend.generate(template.render(question=sample.question), params)
        except BackendError as exc:
            return (sample.id, str(exc))
        prediction = trim_continuation(result.text)
        category = categorize(sample, prediction, rouge_threshold)
        return AssessedSample(
            sample=sample,
            prediction=prediction,
            category=category,
            answer_entropy=_mean_generation_entropy(result.tokens, mode),
        )

    outcomes = bounded_map(one, samples, backend.info.parallelism)
    correct = tuple(o for o in outcomes if isinstance(o, AssessedSample) and o.category in (1, 3))
    incorrect = tuple(o for o in outcomes if isinstance(o, AssessedSample) and o.category in (2, 4, 5))
    errored = tuple(o for o in outcomes if not isinstance(o, AssessedSample))
    return StageOnePartition(correct=correct, incorrect=incorrect, errored=errored)


# -- stage 2 -----------------------------------------------------------------


def stage2_disambiguate(
    samples: Sequence[QASample],
    backend: Backend,
    templates: Mapping[str, PromptTemplate],
    params: GenerationParams,
    *,
    mode: TruncationMode,
    epsilon: float,
) -> tuple[list[DisambiguationRecord], list[tuple[str, str]]]:
    """Self-disambiguate each query and measure the information gain.

    Both the query and its rewrite are scored as bare sentences against an
    empty prefix, so the two entropies are computed under identical
    conditioning. An empty rewrite yields a record with zero gain, an
    unambiguous verdict, and the ``empty_disambiguation`` flag. Backend
    failures are returned separately as (sample_id, error) pairs.
    """
    template = templates["disambiguation"]

    def one(sample: QASample):
        try:
            result = backend.generate(template.render(question=sample.question), params)
            disambig = trim_continuation(result.text)
            profile_q = entropy_profile(backend.score(sample.question, ""), mode)
            if not disambig:
                return DisambiguationRecord(
                    sample_id=sample.id,
                    query_text=sample.question,
                    disambig_text="",
                    h_query=profile_q.average_entropy,
                    h_disambig=profile_q.average_entropy,
                    info_gain=0.0,
                    verdict=Verdict.PERCEIVED_UNAMBIGUOUS,
                    flags=(EMPTY_DISAMBIGUATION_FLAG,),
                )
            profile_d = entropy_profile(backend.score(disambig, ""), mode)
            gain = info_gain(profile_q, profile_d)
            return DisambiguationRecord(
                sample_id=sample.id,
                query_text=sample.question,
                disambig_text=disambig,
                h_query=profile_q.average_entropy,
                h_disambig=profile_d.average_entropy,
                info_gain=gain,
                verdict=classify(gain, epsilon),
            )
        except BackendError as exc:
            return (sample.id, str(exc))

    outcomes = bounded_map(one, samples, backend.info.parallelism)
    records = [o for o in outcomes if isinstance(o, DisambiguationRecord)]
    errored = [o for o in outcomes if not isinstance(o, DisambiguationRecord)]
    return records, errored


# -- stage 3 -----------------------------------------------------------------


def stage3_fixed_label(sample_id: str, master_seed: int) -> ClarifyLabel:
    """Uniform seeded choice among the six canonical phrases."""
    phrase = rng_for(master_seed, "stage3_fixed", sample_id).choice(FIXED_CLARIFICATIONS)
    return ClarifyLabel(sample_id=sample_id, text=phrase, kind=LabelKind.FIXED)


def stage3_generated_label(
    record: DisambiguationRecord,
    backend: Backend,
    templates: Mapping[str, PromptTemplate],
    params: GenerationParams,
    *,
    master_seed: int,
) -> ClarifyLabel:
    """Model-generated clarification request naming the ambiguity's source.

    Outputs that do not read as a clarification request fall back to a fixed
    phrase and are flagged.
    """
    if not record.disambig_text:
        raise ValueError(f"record {record.sample_id} has an empty disambiguation")
    prompt = templates["clarification"].render(
        question=record.query_text, disambiguation=record.disambig_text
    )
    text = trim_continuation(backend.generate(prompt, params).text)
    if text and is_clarification(text):
        return ClarifyLabel(sample_id=record.sample_id, text=text, kind=LabelKind.GENERATED)
    fallback = stage3_fixed_label(record.sample_id, master_seed)
    return ClarifyLabel(
        sample_id=record.sample_id,
        text=fallback.text,
        kind=LabelKind.FIXED,
        flags=(FALLBACK_FIXED_FLAG,),
    )


def label_records(
    records: Sequence[DisambiguationRecord],
    kind: LabelKind,
    backend: Backend,
    templates: Mapping[str, PromptTemplate],
    params: GenerationParams,
    *,
    master_seed: int,
) -> list[ClarifyLabel]:
    """Label every record; generated labeling degrades to a flagged fixed
    phrase for records without a usable rewrite."""
    if kind is LabelKind.FIXED:
        return [stage3_fixed_label(r.sample_id, master_seed) for r in records]

    def one(record: DisambiguationRecord) -> ClarifyLabel:
        if not record.disambig_text:
            fallback = stage3_fixed_label(record.sample_id, master_seed)
            return ClarifyLabel(
                sample_id=record.sample_id,
                text=fallback.text,
                kind=LabelKind.FIXED,
                flags=(FALLBACK_FIXED_FLAG, EMPTY_DISAMBIGUATION_FLAG),
            )
        return stage3_generated_label(
            record, backend, templates, params, master_seed=master_seed
        )

    return bounded_map(one, records, backend.info.parallelism)


# -- selection and balancing -------------------------------------------------


def _perceived_ambiguous(
    records: Sequence[DisambiguationRecord], epsilon: float
) -> list[DisambiguationRecord]:
    return [
        r
        for r in records
        if EMPTY_DISAMBIGUATION_FLAG not in r.flags
        and classify(r.info_gain, epsilon) is Verdict.PERCEIVED_AMBIGUOUS
    ]


def _gold_ambiguous_pool(
    records: Sequence[DisambiguationRecord],
    samples_by_id: Mapping[str, QASample],
    strategy: SelectionStrategy,
) -> list[DisambiguationRecord]:
    pool = []
    for record in records:
        sample = samples_by_id.get(record.sample_id)
        if sample is None or sample.gold_ambiguous is None:
            raise ConfigurationError(
                f"strategy {strategy.value} requires gold ambiguity labels; "
                f"sample {record.sample_id!r} has none"
            )
        if sample.gold_ambiguous:
            pool.append(record)
    return pool


def select_and_balance(
    partition: StageOnePartition,
    records: Sequence[DisambiguationRecord],
    strategy: SelectionStrategy,
    epsilon: float,
    master_seed: int,
    *,
    answer_entropy: Mapping[str, float] | None = None,
) -> Selection:
    """Pick the ambiguous half per the strategy and balance both halves.

    The perceived-ambiguity strategy ignores gold labels entirely. The
    ablation and subset strategies draw from the gold-ambiguous records and
    select as many samples as the perceived-ambiguity pool holds, so every
    strategy trains on the same budget. If the correct half is larger it is
    subsampled (seeded, keyed by sample id); if smaller, the ambiguous
    ranking is truncated to match, largest-gain first for the
    perceived-ambiguity strategy and by each strategy's own order otherwise.
    """
    perceived = sorted(
        _perceived_ambiguous(records, epsilon), key=lambda r: -r.info_gain
    )
    if strategy is SelectionStrategy.APA_INFOGAIN:
        ranked = perceived
    else:
        budget = len(perceived)
        samples_by_id = {a.sample.id: a.sample for a in partition.correct + partition.incorrect}
        pool = _gold_ambiguous_pool(records, samples_by_id, strategy)
        if strategy is SelectionStrategy.GT_MAX_INFOGAIN:
            ranked = sorted(pool, key=lambda r: -r.info_gain)[:budget]
        elif strategy is SelectionStrategy.GT_MIN_INFOGAIN:
            ranked = sorted(pool, key=lambda r: r.info_gain)[:budget]
        elif strategy in (SelectionStrategy.GT_RANDOM, SelectionStrategy.PLAIN_RANDOM):
            shuffled = list(pool)
            rng_for(master_seed, strategy.value).shuffle(shuffled)
            ranked = shuffled[:budget]
        elif strategy is SelectionStrategy.ANSWER_ENTROPY:
            if answer_entropy is None:
                raise ConfigurationError(
                    "answer_entropy strategy requires per-sample answer entropies"
                )
            missing = [r.sample_id for r in pool if answer_entropy.get(r.sample_id) is None]
            if missing:
                raise ConfigurationError(
                    f"answer entropy missing for sample(s): {missing[:5]}"
                )
            ranked = sorted(pool, key=lambda r: -answer_entropy[r.sample_id])[:budget]
        else:  # pragma: no cover - enum is exhaustive
            raise ConfigurationError(f"unknown strategy {strategy}")

    if not ranked:
        raise ConfigurationError(
            "no ambiguous samples were selected; lower epsilon "
            f"(currently {epsilon}) or check the detection records"
        )

    n = len(partition.correct)
    m = len(ranked)
    if n > m:
        keep = {
            a.sample.id
            for a in sorted(
                partition.correct,
                key=lambda a: derive_seed(master_seed, "balance_correct", a.sample.id),
            )[:m]
        }
        correct_final = tuple(a for a in partition.correct if a.sample.id in keep)
        ambiguous_final = tuple(ranked)
    elif n < m:
        correct_final = partition.correct
        ambiguous_final = tuple(ranked[:n])
    else:
        correct_final = partition.correct
        ambiguous_final = tuple(ranked)
    return Selection(
        correct=correct_final,
        ambiguous=ambiguous_final,
        strategy=strategy,
        epsilon=epsilon,
    )


def sweep_epsilon(
    records: Sequence[DisambiguationRecord], epsilons: Sequence[float]
) -> list[tuple[float, int]]:
    """Ambiguous-pool size at each threshold, in the given order."""
    if not epsilons:
        raise ValueError("epsilons must be non-empty")
    return [(eps, len(_perceived_ambiguous(records, eps))) for eps in epsilons]


# -- checkpoint serialization --------------------------------------------------


def write_partition(partition: StageOnePartition, path: str | Path) -> None:
    def lines():
        for a in partition.correct + partition.incorrect:
            yield {
                "id": a.sample.id,
                "category": a.category,
                "prediction": a.prediction,
                "answer_entropy": a.answer_entropy,
            }
        for sample_id, error in partition.errored:
            yield {"id": sample_id, "error": error}

    write_jsonl_atomic(path, lines())


def read_partition(
    path: str | Path, samples_by_id: Mapping[str, QASample]
) -> StageOnePartition:
    correct: list[AssessedSample] = []
    incorrect: list[AssessedSample] = []
    errored: list[tuple[str, str]] = []
    for line_number, obj in read_jsonl(path):
        sample_id = obj.get("id")
        if sample_id is None:
            raise ParseError("missing 'id'", line_number)
        if "error" in obj:
            errored.append((str(sample_id), str(obj["error"])))
            continue
        sample = samples_by_id.get(str(sample_id))
        if sample is None:
            raise DataIntegrityError(
                f"line {line_number}: sample {sample_id!r} not in the dataset"
            )
        try:
            assessed = AssessedSample(
                sample=sample,
                prediction=str(obj["prediction"]),
                category=int(obj["category"]),
                answer_entropy=obj.get("answer_entropy"),
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", line_number) from exc
        (correct if assessed.category in (1, 3) else incorrect).append(assessed)
    return StageOnePartition(tuple(correct), tuple(incorrect), tuple(errored))


def write_records(records: Sequence[DisambiguationRecord], path: str | Path) -> None:
    write_jsonl_atomic(
        path,
        (
            {
                "id": r.sample_id,
                "query": r.query_text,
                "disambig": r.disambig_text,
                "h_query": r.h_query,
                "h_disambig": r.h_disambig,
                "info_gain": r.info_gain,
                "verdict": r.verdict.value,
                "flags": list(r.flags),
            }
            for r in records
        ),
    )


def read_records(path: str | Path) -> list[DisambiguationRecord]:
    records = []
    for line_number, obj in read_jsonl(path):
        try:
            records.append(
                DisambiguationRecord(
                    sample_id=str(obj["id"]),
                    query_text=str(obj["query"]),
                    disambig_text=str(obj["disambig"]),
                    h_query=float(obj["h_query"]),
                    h_disambig=float(obj["h_disambig"]),
                    info_gain=float(obj["info_gain"]),
                    verdict=Verdict(obj["verdict"]),
                    flags=tuple(obj.get("flags", [])),
                )
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", line_number) from exc
        except ValueError as exc:
            raise ParseError(str(exc), line_number) from exc
    return records


def write_labels(labels: Sequence[ClarifyLabel], path: str | Path) -> None:
    write_jsonl_atomic(
        path,
        (
            {"id": lab.sample_id, "text": lab.text, "kind": lab.kind.value,
             "flags": list(lab.flags)}
            for lab in labels
        ),
    )


def read_labels(path: str | Path) -> list[ClarifyLabel]:
    labels = []
    for line_number, obj in read_jsonl(path):
        try:
            labels.append(
                ClarifyLabel(
                    sample_id=str(obj["id"]),
                    text=str(obj["text"]),
                    kind=LabelKind(obj["kind"]),
                    flags=tuple(obj.get("flags", [])),
                )
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", line_number) from exc
        except ValueError as exc:
            raise ParseError(str(exc), line_number) from exc
    return labels
