"""QA dataset I/O, prompt templates, and automated question ambiguation.

Datasets are JSONL files with one object per line:
``{"id", "question", "answers", "ambiguous", "source"}``. ``answers`` may be
empty only for ambiguous samples; ``ambiguous`` is optional (absent when no
gold ambiguity label exists).

Prompt templates are plain-text assets with literal ``<slot>`` markers and
are substituted verbatim, with no escaping and no recursion. The packaged
assets under ``ambigkit/templates/`` are the canonical bodies; a run may
point at an alternative directory with the same file names.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import Backend, GenerationParams
from .errors import ConfigurationError, DataIntegrityError, ParseError, TemplateError

# Trailing characters ignored when parsing one-word verdicts like "Yes.".
_WORD_PUNCT = ".,!?;:"


@dataclass(frozen=True)
class QASample:
    """One question with gold answers and an optional gold ambiguity label."""

    id: str
    question: str
    answers: tuple[str, ...]
    gold_ambiguous: bool | None = None
    source: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DataIntegrityError("sample id must be non-empty")
        if not self.question:
            raise DataIntegrityError(f"sample {self.id}: question must be non-empty")
        if self.gold_ambiguous is False and not self.answers:
            raise DataIntegrityError(
                f"sample {self.id}: unambiguous samples need at least one answer"
            )


def _sample_from_obj(obj: object, line_number: int) -> QASample:
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", line_number)
    try:
        sample = QASample(
            id=str(obj["id"]),
            question=str(obj["question"]),
            answers=tuple(str(a) for a in obj.get("answers", [])),
            gold_ambiguous=obj.get("ambiguous"),
            source=str(obj.get("source", "")),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", line_number) from exc
    if sample.gold_ambiguous is not None and not isinstance(
        sample.gold_ambiguous, bool
    ):
        raise ParseError("field 'ambiguous' must be a boolean", line_number)
    return sample


def load_dataset(path: str | Path) -> list[QASample]:
    """Order-preserving JSONL load; duplicate ids are rejected."""
    samples: list[QASample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_number) from exc
            sample = _sample_from_obj(obj, line_number)
            if sample.id in seen:
                raise DataIntegrityError(
                    f"line {line_number}: duplicate sample id {sample.id!r}"
                )
            seen.add(sample.id)
            samples.append(sample)
    return samples


def sample_to_obj(sample: QASample) -> dict:
    obj = {
        "id": sample.id,
        "question": sample.question,
        "answers": list(sample.answers),
    }
    if sample.gold_ambiguous is not None:
        obj["ambiguous"] = sample.gold_ambiguous
    obj["source"] = sample.source
    return obj


def save_dataset(samples: Iterable[QASample], path: str | Path) -> None:
    from .jsonio import write_jsonl_atomic

    write_jsonl_atomic(path, (sample_to_obj(s) for s in samples))


def trim_continuation(text: str) -> str:
    """Cut a model continuation at the first newline and strip whitespace.

    Templates are line-oriented; anything past the first newline belongs to
    the next few-shot block, not to the answer.
    """
    return text.split("\n", 1)[0].strip()


@dataclass(frozen=True)
class PromptTemplate:
    """A named template body with literal slot markers.

    ``slots`` maps slot names to their markers; every declared marker must
    appear exactly once in the body.
    """

    name: str
    body: str
    slots: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for slot, marker in self.slots.items():
            count = self.body.count(marker)
            if count != 1:
                raise TemplateError(
                    f"template {self.name!r}: marker {marker!r} for slot "
                    f"{slot!r} appears {count} times, expected exactly once"
                )

    def render(self, **values: str) -> str:
        """Substitute all declared slots simultaneously and literally."""
        missing = [s for s in self.slots if s not in values]
        if missing:
            raise TemplateError(
                f"template {self.name!r}: missing slot(s) {', '.join(missing)}"
            )
        unknown = [s for s in values if s not in self.slots]
        if unknown:
            raise TemplateError(
                f"template {self.name!r}: unknown slot(s) {', '.join(unknown)}"
            )
        by_marker = {marker: values[slot] for slot, marker in self.slots.items()}
        if not by_marker:
            return self.body
        pattern = re.compile("|".join(re.escape(m) for m in by_marker))
        return pattern.sub(lambda m: by_marker[m.group(0)], self.body)

    @property
    def answer_cue(self) -> str:
        """The literal body text after the last slot marker.

        Rendered prompts always end with this cue; exporters use it to check
        that a prompt was produced by this template.
        """
        last_end = 0
        for marker in self.slots.values():
            idx = self.body.rfind(marker)
            last_end = max(last_end, idx + len(marker))
        return self.body[last_end:]


# Canonical template names and their slot markers. The marker spellings match
# the shipped bodies and are part of the asset contract.
TEMPLATE_SLOTS: dict[str, dict[str, str]] = {
    "direct": {"question": "<question>"},
    "disambiguation": {"question": "<question>"},
    "clarification": {
        "question": "<ambiguous question>",
        "disambiguation": "<disambiguation>",
    },
    "ambiguity_aware": {"question": "<question>"},
    "self_ask": {"question": "<question>", "answer": "<generated answer>"},
    "ambiguate": {"question": "<question>"},
    "ambiguation_validation": {"candidate": "<ambiguous generation>"},
}


def _packaged_template_dir() -> Path:
    return Path(str(resources.files("ambigkit").joinpath("templates")))


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load the canonical template set from ``directory`` (packaged default).

    A template body is its file content minus one trailing newline.
    """
    base = Path(directory) if directory is not None else _packaged_template_dir()
    templates: dict[str, PromptTemplate] = {}
    for name, slots in TEMPLATE_SLOTS.items():
        path = base / f"{name}.txt"
        if not path.is_file():
            raise ConfigurationError(f"template file not found: {path}")
        body = path.read_text(encoding="utf-8")
        if body.endswith("\n"):
            body = body[:-1]
        templates[name] = PromptTemplate(name=name, body=body, slots=slots)
    return templates


def template_fingerprints(templates: Mapping[str, PromptTemplate]) -> dict[str, str]:
    """SHA-256 of each template body, for run manifests."""
    return {
        name: hashlib.sha256(tpl.body.encode("utf-8")).hexdigest()
        for name, tpl in sorted(templates.items())
    }


def _first_word(text: str) -> str:
    words = text.split()
    return words[0].rstrip(_WORD_PUNCT).lower() if words else ""


def ambiguate(
    sample: QASample,
    backend: Backend,
    template: PromptTemplate,
    params: GenerationParams,
) -> str | None:
    """Generate one ambiguated rewrite of the question, or None if the model
    produced nothing usable."""
    if not sample.question:
        raise ValueError("sample question must be non-empty")
    result = backend.generate(template.render(question=sample.question), params)
    candidate = trim_continuation(result.text)
    return candidate or None


def validate_ambiguation(
    candidate: str,
    backend: Backend,
    template: PromptTemplate,
    params: GenerationParams,
) -> bool:
    """True iff the validator's first word is "yes" (case-insensitive)."""
    if not candidate:
        raise ValueError("candidate must be non-empty")
    result = backend.generate(template.render(candidate=candidate), params)
    return _first_word(trim_continuation(result.text)) == "yes"


def filter_allowlist(
    samples: Sequence[QASample], allowlist_path: str | Path
) -> list[QASample]:
    """Keep only samples whose id appears in the allowlist file (one id per
    line), preserving input order. Stands in for a human-validation pass."""
    with open(allowlist_path, "r", encoding="utf-8") as fh:
        allowed = {line.strip() for line in fh if line.strip()}
    return [s for s in samples if s.id in allowed]
