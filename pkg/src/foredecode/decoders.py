"""Heuristic confidence decoders (random / probability / margin / entropy)
and the semi-autoregressive block schedule that limits which positions are
decodable at each step.

Tie-breaking is total everywhere: lowest position index first, then lowest
token id. Determinism is required for the oracle-equivalence tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    MASK,
    NoMaskedPositions,
    RunRecord,
    SequenceState,
    StepTrace,
    assignment_from_output,
)
from .models import ModelBackend


@dataclass(frozen=True)
class BlockSchedule:
    """Sliding decode window of ``block_size`` positions, completed left to
    right. The current block is derived from the state: the first block that
    still contains a MASK, so it advances exactly when a block completes."""

    block_size: int

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")

    def current_block(self, state: SequenceState) -> int:
        for j, t in enumerate(state.tokens):
            if t == MASK:
                return j // self.block_size
        return state.length // self.block_size

    def active_positions(self, state: SequenceState) -> range:
        b = self.current_block(state)
        lo = b * self.block_size
        return range(lo, min(lo + self.block_size, state.length))

    def active_masked(self, state: SequenceState) -> list[int]:
        return [j for j in self.active_positions(state) if state.tokens[j] == MASK]

    def num_blocks(self, length: int) -> int:
        return -(-length // self.block_size)


def whole_sequence_schedule(length: int) -> BlockSchedule:
    return BlockSchedule(block_size=max(length, 1))


class ScorerKind(str, Enum):
    RANDOM = "random"
    PROBABILITY = "probability"
    MARGIN = "margin"
    ENTROPY = "entropy"


@dataclass
class HeuristicScorer:
    """Position scorer; higher score means decoded earlier.

    Random draws from ``rng`` (one uniform per scored position), so a scorer
    instance is per-trajectory state.
    """

    kind: ScorerKind
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        self.kind = ScorerKind(self.kind)
        if self.kind is ScorerKind.RANDOM and self.rng is None:
            raise ValueError("random scorer needs a seeded Generator")

    def score(self, dist: np.ndarray) -> float:
        return score(self, dist)


def score(scorer: HeuristicScorer, dist: np.ndarray) -> float:
    """Score one position distribution.

    probability: max_v p[v].  margin: largest minus second largest.
    entropy: sum p ln p (negated entropy, 0 ln 0 := 0) so higher is better.
    random: seeded uniform draw in [0, 1).
    """
    p = np.asarray(dist, dtype=np.float64)
    if scorer.kind is ScorerKind.RANDOM:
        assert scorer.rng is not None
        return float(scorer.rng.random())
    if scorer.kind is ScorerKind.PROBABILITY:
        return float(p.max())
    if scorer.kind is ScorerKind.MARGIN:
        top2 = np.partition(p, -2)[-2:]
        return float(top2[1] - top2[0])
    # entropy: 0 ln 0 := 0, not the LOG_ZERO clamp
    nz = p[p > 0.0]
    return float(np.sum(nz * np.log(nz)))


def argmax_token(dist: np.ndarray) -> int:
    """Highest-probability token, ties to the lowest id."""
    return int(np.argmax(dist))


def heuristic_step(
    backend: ModelBackend,
    state: SequenceState,
    schedule: BlockSchedule,
    scorer: HeuristicScorer,
    n: int,
) -> tuple[SequenceState, StepTrace]:
    """One model call; decode the min(n, #active masked) highest-scoring
    active masked positions, each with its argmax token."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    active = schedule.active_masked(state)
    if not active:
        raise NoMaskedPositions("no active masked positions")
    output = backend.evaluate(state)
    # scores computed in ascending position order so Random stays reproducible
    scored = [(score(scorer, output.probs[j]), j) for j in active]
    scored.sort(key=lambda sj: (-sj[0], sj[1]))
    chosen = [j for _, j in scored[: min(n, len(active))]]
    assignments = tuple(
        assignment_from_output(output, j, argmax_token(output.probs[j])) for j in sorted(chosen)
    )
    new_state = state
    new_state = _apply(new_state, assignments)
    trace = StepTrace(
        step_index=state.step_index,
        phase=f"heuristic:{scorer.kind.value}",
        assignments=assignments,
        model_calls=1,
    )
    return new_state, trace


def _apply(state: SequenceState, assignments) -> SequenceState:
    from .core import apply_assignments

    return apply_assignments(state, assignments)


def _allocate_steps(block_lengths: list[int], total_steps: int) -> list[int]:
    """Split a fixed step budget across blocks: at least one step per block,
    at most one per token, shares proportional to block length (largest
    remainder)."""
    n_blocks = len(block_lengths)
    length = sum(block_lengths)
    if not n_blocks <= total_steps <= length:
        raise ValueError(
            f"need num_blocks <= T <= L, got T={total_steps}, "
            f"blocks={n_blocks}, L={length}"
        )
    raw = [total_steps * bl / length for bl in block_lengths]
    steps = [min(max(1, math.floor(r)), bl) for r, bl in zip(raw, block_lengths)]
    remainders = sorted(
        range(n_blocks), key=lambda i: (-(raw[i] - math.floor(raw[i])), i)
    )
    k = 0
    while sum(steps) < total_steps:
        i = remainders[k % n_blocks]
        if steps[i] < block_lengths[i]:
            steps[i] += 1
        k += 1
    while sum(steps) > total_steps:
        i = max(range(n_blocks), key=lambda i: (steps[i] - 1, -i))
        if steps[i] > 1:
            steps[i] -= 1
    return steps


def fixed_step_decode(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule,
    scorer: HeuristicScorer,
    total_steps: int,
) -> tuple[SequenceState, RunRecord]:
    """Decode a fully masked sequence in exactly ``total_steps`` model calls.

    Within each block the per-step quota is ceil(remaining / steps left), so
    the budget is spent exactly; across blocks the budget is allocated
    proportionally to block length.
    """
    state = SequenceState.fully_masked(length)
    blocks = schedule.num_blocks(length)
    block_lengths = [
        len(range(b * schedule.block_size, min((b + 1) * schedule.block_size, length)))
        for b in range(blocks)
    ]
    per_block = _allocate_steps(block_lengths, total_steps)
    record = RunRecord(
        decoder=f"heuristic:{scorer.kind.value}",
        params={"T": total_steps, "block_size": schedule.block_size},
        family="", fixture_index=-1, length=length, vocab_size=0, seed=0,
    )
    for b, steps_here in enumerate(per_block):
        remaining = block_lengths[b]
        for s in range(steps_here):
            quota = -(-remaining // (steps_here - s))
            state, trace = heuristic_step(backend, state, schedule, scorer, quota)
            record.steps.append(trace)
            remaining -= len(trace.assignments)
    record.final_tokens = state.tokens
    record.model_calls = record.declared_calls()
    return state, record


def greedy_decode(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule,
    scorer: HeuristicScorer,
    n: int = 1,
) -> tuple[SequenceState, RunRecord]:
    """Adaptive loop: decode n tokens per step until no MASK remains."""
    state = SequenceState.fully_masked(length)
    record = RunRecord(
        decoder=f"heuristic:{scorer.kind.value}",
        params={"n": n, "block_size": schedule.block_size},
        family="", fixture_index=-1, length=length, vocab_size=0, seed=0,
    )
    while not state.is_complete():
        state, trace = heuristic_step(backend, state, schedule, scorer, n)
        record.steps.append(trace)
    record.final_tokens = state.tokens
    record.model_calls = record.declared_calls()
    return state, record
