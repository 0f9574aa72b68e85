"""Decoding-order engine for masked sequence denoisers: heuristic scorers,
lookahead decoding with dynamic pruning, a phase-adaptive accelerated
variant, exact small-scale oracles, and a benchmark harness."""

from .core import (
    MASK,
    Assignment,
    ModelOutput,
    RunRecord,
    SequenceState,
    StepTrace,
    Vocab,
    apply_assignments,
    masked_positions,
)
from .models import (
    CallCounter,
    JointTable,
    ModelBackend,
    OracleBackend,
    conditional_marginals,
    joint_argmax,
    perturb,
)
from .decoders import (
    BlockSchedule,
    HeuristicScorer,
    ScorerKind,
    fixed_step_decode,
    heuristic_step,
    score,
)
from .fdm import CandidateSequence, FdmConfig, c_global, c_local, fdm_decode, fdm_step, generate_candidates
from .fdma import FdmaConfig, Phase, PhaseDecision, classify_phase, fdma_decode, fdma_step
from .analysis import (
    PolicyDistribution,
    TheoremReport,
    consistency_ratio,
    order_influence,
    softmax_policy,
    verify_theorem1,
    winners_curse,
)

__version__ = "0.1.0"

__all__ = [
    "MASK",
    "Assignment",
    "ModelOutput",
    "RunRecord",
    "SequenceState",
    "StepTrace",
    "Vocab",
    "apply_assignments",
    "masked_positions",
    "CallCounter",
    "JointTable",
    "ModelBackend",
    "OracleBackend",
    "conditional_marginals",
    "joint_argmax",
    "perturb",
    "BlockSchedule",
    "HeuristicScorer",
    "ScorerKind",
    "fixed_step_decode",
    "heuristic_step",
    "score",
    "CandidateSequence",
    "FdmConfig",
    "c_global",
    "c_local",
    "fdm_decode",
    "fdm_step",
    "generate_candidates",
    "FdmaConfig",
    "Phase",
    "PhaseDecision",
    "classify_phase",
    "fdma_decode",
    "fdma_step",
    "PolicyDistribution",
    "TheoremReport",
    "consistency_ratio",
    "order_influence",
    "softmax_policy",
    "verify_theorem1",
    "winners_curse",
    "__version__",
]
