"""Shared domain types: token sequences, per-position distributions, and
decode-step bookkeeping used by every decoder in the package.

Tokens are dense integer ids ``0..m-1``; the masked sentinel is ``-1`` both
in memory and in every serialized form. Log probabilities are natural logs
with ``ln(0)`` clamped to ``LOG_ZERO`` so scores stay totally ordered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MASK: int = -1

# ln(0) clamp; keeps candidate scores finite and totally ordered.
LOG_ZERO: float = -1e9

DIST_ATOL: float = 1e-9


class DecodingError(Exception):
    """Base class for contract violations raised by this package."""


class AssignmentToUnmaskedPosition(DecodingError):
    pass


class DuplicatePosition(DecodingError):
    pass


class NoMaskedPositions(DecodingError):
    pass


def safe_log(p: float) -> float:
    """Natural log with ln(0) clamped to LOG_ZERO."""
    return math.log(p) if p > 0.0 else LOG_ZERO


@dataclass(frozen=True)
class Vocab:
    """Token alphabet of ``size`` real ids 0..size-1 plus the MASK sentinel."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")

    def contains(self, token: int) -> bool:
        return 0 <= token < self.size


@dataclass(frozen=True)
class SequenceState:
    """A fixed-length token sequence, possibly partially masked.

    Immutable; decoding produces new states via :func:`apply_assignments`.
    Once a position is non-MASK it never returns to MASK.
    """

    tokens: tuple[int, ...]
    step_index: int = 0

    def __post_init__(self) -> None:
        if any(t < MASK for t in self.tokens):
            raise ValueError("tokens must be MASK (-1) or nonnegative ids")

    @classmethod
    def fully_masked(cls, length: int) -> "SequenceState":
        return cls(tokens=(MASK,) * length)

    @property
    def length(self) -> int:
        return len(self.tokens)

    def is_complete(self) -> bool:
        return MASK not in self.tokens

    def masked_count(self) -> int:
        return sum(1 for t in self.tokens if t == MASK)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)

    def to_json(self) -> list[int]:
        """JSON form: array of ints with -1 for MASK."""
        return list(self.tokens)

    @classmethod
    def from_json(cls, tokens: Sequence[int], step_index: int = 0) -> "SequenceState":
        return cls(tokens=tuple(int(t) for t in tokens), step_index=step_index)


def validate_distribution(probs: np.ndarray, atol: float = DIST_ATOL) -> None:
    """Check a per-position distribution: entries in [0, 1], summing to 1."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"distribution must be 1-d, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0 + atol):
        raise ValueError("distribution entries must lie in [0, 1]")
    total = float(p.sum())
    if abs(total - 1.0) > atol:
        raise ValueError(f"distribution sums to {total}, not 1 within {atol}")


@dataclass(frozen=True)
class ModelOutput:
    """Per-position distributions over the vocabulary, one row per position.

    ``probs`` has shape (L, m). Rows at non-masked positions exist but every
    consumer ignores them.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"expected (L, m) probabilities, got shape {p.shape}")
        object.__setattr__(self, "probs", p)
        for row in p:
            validate_distribution(row)

    @property
    def length(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]

    def position(self, j: int) -> np.ndarray:
        return self.probs[j]


@dataclass(frozen=True)
class Assignment:
    """One decoded token: (position, token, ln model probability)."""

    position: int
    token: int
    logprob: float

    def __post_init__(self) -> None:
        if self.logprob > 1e-12:
            raise ValueError(f"logprob must be <= 0, got {self.logprob}")


def assignment_from_output(output: ModelOutput, position: int, token: int) -> Assignment:
    """Build an Assignment sourcing its logprob from ``output``."""
    return Assignment(position, token, safe_log(float(output.probs[position, token])))


def masked_positions(state: SequenceState) -> list[int]:
    """Indices whose token is MASK, ascending."""
    return [j for j, t in enumerate(state.tokens) if t == MASK]


def apply_assignments(state: SequenceState, assignments: Iterable[Assignment]) -> SequenceState:
    """Fill masked positions and advance the step index by one.

    Every assignment must target a currently masked position and no two may
    share a position. An empty list is permitted (internal retries only;
    public decoder steps always decode at least one token).
    """
    tokens = list(state.tokens)
    seen: set[int] = set()
    for a in assignments:
        if a.position in seen:
            raise DuplicatePosition(f"position {a.position} assigned twice")
        seen.add(a.position)
        if not (0 <= a.position < len(tokens)):
            raise IndexError(f"position {a.position} out of range")
        if tokens[a.position] != MASK:
            raise AssignmentToUnmaskedPosition(
                f"position {a.position} already holds token {tokens[a.position]}"
            )
        tokens[a.position] = a.token
    return SequenceState(tokens=tuple(tokens), step_index=state.step_index + 1)


@dataclass
class StepTrace:
    """Bookkeeping for one decode step."""

    step_index: int
    phase: str
    assignments: tuple[Assignment, ...]
    model_calls: int
    lam_size: int = 0
    c_local: float | None = None
    c_global: float | None = None
    selected_score: float | None = None
    n_qualified: int | None = None
    n_borderline: int | None = None

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "phase": self.phase,
            "assignments": [[a.position, a.token, a.logprob] for a in self.assignments],
            "model_calls": self.model_calls,
            "lam_size": self.lam_size,
            "c_local": self.c_local,
            "c_global": self.c_global,
            "selected_score": self.selected_score,
            "n_qualified": self.n_qualified,
            "n_borderline": self.n_borderline,
        }


@dataclass
class RunRecord:
    """One decoding trajectory: per-step traces plus end-of-run metrics."""

    decoder: str
    params: dict
    family: str
    fixture_index: int
    length: int
    vocab_size: int
    seed: int
    steps: list[StepTrace] = field(default_factory=list)
    final_tokens: tuple[int, ...] = ()
    recovery: bool | None = None
    log_mass: float | None = None
    model_calls: int = 0
    wall_seconds: float = 0.0
    config_hash: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def tokens_per_second(self) -> float:
        if self.wall_seconds <= 0.0:
            return 0.0
        return self.length / self.wall_seconds

    def declared_calls(self) -> int:
        return sum(t.model_calls for t in self.steps)
