"""Uniform text-generation and teacher-forced scoring interface.

A backend produces, for every generated or scored position, the model's
next-token distribution information: the realized token's logprob, the top-k
alternatives, and the probability mass not covered by them. All logprobs are
natural-log (nats) everywhere; no base conversion is ever applied.
"""

from __future__ import annotations

import abc
import enum
import math
from dataclasses import dataclass, field

from .errors import NormalizationError

# Tolerance on |sum(probs) + tail_mass - 1| for a distribution to count as
# normalized, and on logprob/tail sign checks.
NORMALIZATION_TOLERANCE = 1e-6
_SIGN_TOLERANCE = 1e-9


class FinishReason(enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class GenerationParams:
    """Decoding choices for one generation call.

    temperature 0 means greedy decoding. ``seed`` makes sampled decoding
    reproducible where the backend honors it.
    """

    max_tokens: int = 64
    temperature: float = 0.0
    top_k_logprobs: int = 5
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k_logprobs < 1:
            raise ValueError("top_k_logprobs must be >= 1")


@dataclass(frozen=True)
class TokenDistribution:
    """Next-token distribution information at one position.

    ``top_alternatives`` lists (token_text, logprob) pairs in descending
    probability; ``tail_mass`` is the probability not covered by them. The
    realized token need not be modal, but appears among the alternatives
    whenever its probability exceeds the k-th alternative's.
    """

    token_text: str
    token_logprob: float
    top_alternatives: tuple[tuple[str, float], ...]
    tail_mass: float

    def __post_init__(self) -> None:
        if self.token_logprob > _SIGN_TOLERANCE:
            raise NormalizationError(
                f"token_logprob must be <= 0, got {self.token_logprob}"
            )
        if self.tail_mass < -_SIGN_TOLERANCE:
            raise NormalizationError(f"tail_mass must be >= 0, got {self.tail_mass}")
        covered = math.fsum(math.exp(lp) for _, lp in self.top_alternatives)
        total = covered + self.tail_mass
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise NormalizationError(
                f"alternative mass {covered:.9f} + tail {self.tail_mass:.9f} "
                f"= {total:.9f}, not 1 within {NORMALIZATION_TOLERANCE}"
            )

    def alternative_probs(self) -> list[float]:
        """Probabilities of the listed alternatives, in listed order."""
        return [math.exp(lp) for _, lp in self.top_alternatives]


@dataclass(frozen=True)
class GenerationResult:
    """A model continuation plus per-token distribution data."""

    text: str
    tokens: tuple[TokenDistribution, ...]
    finish_reason: FinishReason


@dataclass(frozen=True)
class ScoringResult:
    """Teacher-forced distributions, one per token of the scored text."""

    tokens: tuple[TokenDistribution, ...]

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass
class BackendInfo:
    """Identity echoed into run manifests."""

    kind: str
    detail: str = ""
    parallelism: int = 4
    extra: dict = field(default_factory=dict)


class Backend(abc.ABC):
    """Shared interface for the toy oracle backend and remote HTTP backends.

    Implementations are immutable after construction and safe to share across
    concurrent workers; in-flight parallelism is bounded by ``info.parallelism``.
    """

    info: BackendInfo

    @abc.abstractmethod
    def generate(self, prompt: str, params: GenerationParams) -> GenerationResult:
        """Continue ``prompt`` and return the continuation with token data.

        Raises ValueError on an empty prompt.
        """

    @abc.abstractmethod
    def score(self, text: str, context: str = "") -> ScoringResult:
        """Teacher-force ``text`` after ``context`` and return one
        TokenDistribution per token of ``text`` only.

        Raises ValueError on empty text.
        """


def bounded_map(fn, items, max_workers: int) -> list:
    """Order-preserving map over ``items`` with bounded thread parallelism.

    Exceptions propagate; callers that tolerate per-item failures catch them
    inside ``fn``.
    """
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))
