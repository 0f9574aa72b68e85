"""Phase-adaptive acceleration of the lookahead decoder.

Each step classifies the active masked positions by their argmax
probability against two thresholds eta1 > eta2: positions above eta1 are
"qualified", positions in (eta2, eta1] are "borderline". The branch order
is: no qualified -> explore one token with lookahead; at least N qualified
-> greedily commit the top N; no borderline -> greedily commit all
qualified; otherwise -> balance, committing n_qualified tokens chosen by
lookahead over the qualified-or-borderline pool.

The classification model call doubles as the inner step's base call, so a
step costs one evaluation plus any lookahead calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import (
    MASK,
    ModelOutput,
    NoMaskedPositions,
    RunRecord,
    SequenceState,
    StepTrace,
)
from .decoders import BlockSchedule, whole_sequence_schedule
from .fdm import FdmConfig, fdm_step
from .models import ModelBackend


class Phase(str, Enum):
    EXPLORATION = "exploration"
    ACCELERATION_CLIPPED = "acceleration-clipped"
    ACCELERATION = "acceleration"
    BALANCE = "balance"


@dataclass(frozen=True)
class FdmaConfig:
    """Controller knobs. eta2 < eta1 is enforced at construction."""

    gamma1: float = 0.5
    K1: int = 2
    eta1: float = 0.8
    eta2: float = 0.7
    N: int = 8
    block_restricted: bool = True
    block_global: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta2 < self.eta1 <= 1.0:
            raise ValueError(
                f"need 0 <= eta2 < eta1 <= 1, got eta1={self.eta1}, eta2={self.eta2}"
            )
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.K1 < 1:
            raise ValueError(f"K1 must be >= 1, got {self.K1}")
        if not 0.0 <= self.gamma1 <= 1.0:
            raise ValueError(f"gamma1 must lie in [0, 1], got {self.gamma1}")


@dataclass(frozen=True)
class PhaseDecision:
    phase: Phase
    n_qualified: int
    n_borderline: int


def phase_from_counts(n_qualified: int, n_borderline: int, clip: int) -> Phase:
    """Branch table, evaluated in order."""
    if n_qualified == 0:
        return Phase.EXPLORATION
    if n_qualified >= clip:
        return Phase.ACCELERATION_CLIPPED
    if n_borderline == 0:
        return Phase.ACCELERATION
    return Phase.BALANCE


def classify_phase(
    output: ModelOutput,
    state: SequenceState,
    schedule: BlockSchedule,
    cfg: FdmaConfig,
) -> PhaseDecision:
    """Count qualified / borderline active masked positions and pick the phase."""
    positions = (
        schedule.active_masked(state)
        if cfg.block_restricted
        else [j for j in range(state.length) if state.tokens[j] == MASK]
    )
    if not positions:
        raise NoMaskedPositions("no active masked positions")
    confidences = [float(output.probs[j].max()) for j in positions]
    q = sum(1 for c in confidences if c > cfg.eta1)
    b = sum(1 for c in confidences if cfg.eta2 < c <= cfg.eta1)
    return PhaseDecision(phase=phase_from_counts(q, b, cfg.N),
                         n_qualified=q, n_borderline=b)


def _inner_config(decision: PhaseDecision, cfg: FdmaConfig) -> FdmConfig:
    common = dict(block_restricted=cfg.block_restricted, block_global=cfg.block_global)
    if decision.phase is Phase.EXPLORATION:
        return FdmConfig(K=cfg.K1, gamma=cfg.gamma1, n=1, **common)
    if decision.phase is Phase.ACCELERATION_CLIPPED:
        return FdmConfig(K=1, gamma=1.0, n=cfg.N, **common)
    if decision.phase is Phase.ACCELERATION:
        return FdmConfig(K=1, gamma=1.0, n=decision.n_qualified, **common)
    return FdmConfig(K=cfg.K1, gamma=cfg.eta2, n=decision.n_qualified, **common)


def fdma_step(
    backend: ModelBackend,
    state: SequenceState,
    schedule: BlockSchedule,
    cfg: FdmaConfig,
) -> tuple[SequenceState, StepTrace]:
    """Classify, then dispatch to the lookahead step with phase-dependent
    width, pruning, and token count. One shared base call."""
    output = backend.evaluate(state)
    decision = classify_phase(output, state, schedule, cfg)
    inner = _inner_config(decision, cfg)
    new_state, trace = fdm_step(backend, state, schedule, inner, base_output=output)
    trace.phase = decision.phase.value
    trace.n_qualified = decision.n_qualified
    trace.n_borderline = decision.n_borderline
    return new_state, trace


def fdma_decode(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule | None,
    cfg: FdmaConfig,
) -> tuple[SequenceState, RunRecord]:
    """Run fdma_step until no MASK remains; at most L steps since every step
    decodes at least one token."""
    sched = schedule if schedule is not None else whole_sequence_schedule(length)
    state = SequenceState.fully_masked(length)
    record = RunRecord(
        decoder="fdm-a",
        params={"gamma1": cfg.gamma1, "K1": cfg.K1, "eta1": cfg.eta1,
                "eta2": cfg.eta2, "N": cfg.N, "block_size": sched.block_size},
        family="", fixture_index=-1, length=length, vocab_size=0, seed=0,
    )
    while not state.is_complete():
        state, trace = fdma_step(backend, state, sched, cfg)
        record.steps.append(trace)
    record.final_tokens = state.tokens
    record.model_calls = record.declared_calls()
    return state, record
