"""Lookahead decoding: candidate generation with dynamic pruning, top-K
search-space compression, local + global confidence scoring, and final
selection.

Per step, candidates are the argmax tokens of the active masked positions
whose probability exceeds the pruning threshold gamma. The n-1 most
confident survivors are fixed as shared anchors; the remaining survivors
compete as the distinguishing token. The top-K competitors by local
confidence get one lookahead model call each; the winner maximizes
c_local + c_global. Width K=1 degenerates to probability-greedy decoding,
and gamma=1.0 empties the pool by construction, which is the deliberate
fast path of the accelerated controller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    MASK,
    Assignment,
    ModelOutput,
    NoMaskedPositions,
    RunRecord,
    SequenceState,
    StepTrace,
    apply_assignments,
    assignment_from_output,
)
from .decoders import BlockSchedule, argmax_token, whole_sequence_schedule
from .models import ModelBackend


@dataclass(frozen=True)
class FdmConfig:
    """Lookahead decoder knobs.

    K: search width (candidates receiving a lookahead call).
    gamma: pruning threshold; candidates with argmax probability <= gamma
        are dropped (so gamma=1.0 drops everything).
    n: tokens decoded per step.
    block_restricted: candidates limited to the active block.
    block_global: restrict the global score to the active block (ablation);
        by default it sums over every remaining masked position.
    """

    K: int = 2
    gamma: float = 0.6
    n: int = 1
    block_restricted: bool = True
    block_global: bool = False

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


@dataclass(frozen=True)
class CandidateSequence:
    """One element of the compressed search space: shared anchors plus a
    distinguishing assignment."""

    distinguishing: Assignment
    anchors: tuple[Assignment, ...] = ()
    c_local: float = 0.0
    c_global: float | None = None

    @property
    def score(self) -> float:
        if self.c_global is None:
            return self.c_local
        return self.c_local + self.c_global


def c_local(assignments) -> float:
    """Sum of log probabilities of the tokens committed this step, all
    sourced from the same base model output."""
    return float(sum(a.logprob for a in assignments))


def c_global(output: ModelOutput, state_after: SequenceState,
             positions: range | None = None) -> float:
    """Sum over still-masked positions of sum_v p ln p (negative entropies,
    0 ln 0 := 0). Decoded positions contribute zero. Always <= 0, with
    equality iff every remaining distribution is a point mass."""
    total = 0.0
    scan = positions if positions is not None else range(state_after.length)
    for j in scan:
        if state_after.tokens[j] != MASK:
            continue
        p = output.probs[j]
        nz = p[p > 0.0]
        total += float(np.sum(nz * np.log(nz)))
    return total


def generate_candidates(
    output: ModelOutput,
    state: SequenceState,
    gamma: float,
    schedule: BlockSchedule,
) -> list[Assignment]:
    """One candidate per active masked position: its argmax token and log
    probability. Entries with probability <= gamma are pruned. Sorted by
    logprob descending, position ascending."""
    pool = []
    for j in schedule.active_masked(state):
        tok = argmax_token(output.probs[j])
        p = float(output.probs[j, tok])
        if p <= gamma:
            continue
        pool.append(assignment_from_output(output, j, tok))
    pool.sort(key=lambda a: (-a.logprob, a.position))
    return pool


def _greedy_assignments(output: ModelOutput, active: list[int], n: int) -> tuple[Assignment, ...]:
    """Top-n active masked positions by argmax probability (ties: lowest
    position, lowest token)."""
    ranked = sorted(active, key=lambda j: (-float(output.probs[j].max()), j))
    chosen = sorted(ranked[:n])
    return tuple(assignment_from_output(output, j, argmax_token(output.probs[j])) for j in chosen)


def fdm_step(
    backend: ModelBackend,
    state: SequenceState,
    schedule: BlockSchedule,
    cfg: FdmConfig,
    base_output: ModelOutput | None = None,
) -> tuple[SequenceState, StepTrace]:
    """One lookahead decode step.

    Model-call contract: 1 base call plus, only when the compressed search
    space has at least two members, one lookahead call per member. When
    ``base_output`` is supplied the caller already made the base call (the
    accelerated controller shares its classification evaluation); it still
    counts toward the step's declared calls.

    Branches:
      empty pool      -> greedy fallback, decode top-min(n, #active) by
                         probability, no lookahead;
      |pool| < n      -> decode the whole pool plus the most confident
                         pruned positions up to n tokens, no lookahead;
      |Lambda| <= 1   -> decode anchors + sole candidate, no lookahead;
      otherwise       -> lookahead over Lambda, winner by c_local + c_global,
                         ties to the lowest distinguishing position.
    """
    sched = schedule if cfg.block_restricted else whole_sequence_schedule(state.length)
    active = sched.active_masked(state)
    if not active:
        raise NoMaskedPositions("no active masked positions")
    calls = 1
    output = base_output if base_output is not None else backend.evaluate(state)

    pool = generate_candidates(output, state, cfg.gamma, sched)
    n_cap = min(cfg.n, len(active))

    if not pool:
        assignments = _greedy_assignments(output, active, n_cap)
        new_state = apply_assignments(state, assignments)
        return new_state, StepTrace(
            step_index=state.step_index, phase="fdm:fallback",
            assignments=assignments, model_calls=calls,
            c_local=c_local(assignments), selected_score=c_local(assignments),
        )

    if len(pool) < cfg.n:
        # decode every survivor, then top up from the pruned positions by
        # confidence until n tokens; no lookahead
        in_pool = {a.position for a in pool}
        rest = _greedy_assignments(
            output, [j for j in active if j not in in_pool], n_cap - len(pool)
        )
        assignments = tuple(sorted(pool + list(rest), key=lambda a: a.position))
        new_state = apply_assignments(state, assignments)
        return new_state, StepTrace(
            step_index=state.step_index, phase="fdm:short-pool",
            assignments=assignments, model_calls=calls,
            c_local=c_local(assignments), selected_score=c_local(assignments),
        )

    anchors = tuple(pool[: cfg.n - 1])
    competitors = pool[cfg.n - 1:]
    lam = [
        CandidateSequence(distinguishing=a, anchors=anchors,
                          c_local=c_local(anchors + (a,)))
        for a in competitors[: cfg.K]
    ]

    if len(lam) <= 1:
        winner = lam[0]
        assignments = tuple(sorted(anchors + (winner.distinguishing,),
                                   key=lambda a: a.position))
        new_state = apply_assignments(state, assignments)
        return new_state, StepTrace(
            step_index=state.step_index, phase="fdm:narrow",
            assignments=assignments, model_calls=calls, lam_size=len(lam),
            c_local=winner.c_local, selected_score=winner.c_local,
        )

    global_positions = schedule.active_positions(state) if cfg.block_global else None
    scored: list[CandidateSequence] = []
    for cand in lam:
        trial = apply_assignments(state, anchors + (cand.distinguishing,))
        look = backend.evaluate(trial)
        calls += 1
        scored.append(CandidateSequence(
            distinguishing=cand.distinguishing, anchors=anchors,
            c_local=cand.c_local,
            c_global=c_global(look, trial, global_positions),
        ))
    winner = min(scored, key=lambda c: (-c.score, c.distinguishing.position))
    assignments = tuple(sorted(anchors + (winner.distinguishing,),
                               key=lambda a: a.position))
    new_state = apply_assignments(state, assignments)
    return new_state, StepTrace(
        step_index=state.step_index, phase="fdm:lookahead",
        assignments=assignments, model_calls=calls, lam_size=len(lam),
        c_local=winner.c_local, c_global=winner.c_global,
        selected_score=winner.score,
    )


def fdm_decode(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule | None,
    cfg: FdmConfig,
) -> tuple[SequenceState, RunRecord]:
    """Decode a fully masked sequence with fdm_step until complete."""
    sched = schedule if schedule is not None else whole_sequence_schedule(length)
    state = SequenceState.fully_masked(length)
    record = RunRecord(
        decoder="fdm",
        params={"K": cfg.K, "gamma": cfg.gamma, "n": cfg.n,
                "block_size": sched.block_size, "block_global": cfg.block_global},
        family="", fixture_index=-1, length=length, vocab_size=0, seed=0,
    )
    while not state.is_complete():
        state, trace = fdm_step(backend, state, sched, cfg)
        record.steps.append(trace)
    record.final_tokens = state.tokens
    record.model_calls = record.declared_calls()
    return state, record
