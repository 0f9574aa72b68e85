"""Numerical verification on enumerable joints plus trace metrics.

Three groups:

* an exact KL decomposition check of the local-vs-combined policy gap. The
  chain is enumerated left to right, one token per step, with the oracle
  model. Per context, the combined policy conditions on a fixed target
  completion (the reading under which the softmax normalizer equals the
  completion's probability), and the identity

      eps_F = eps_H - I(next token; completion | context)

  holds exactly; summed by the chain rule this gives
  kl_F = kl_H - delta_total. Note the combined-policy term is a
  joint-weighted log-ratio, not a per-target KL, so kl_F is negative
  whenever the chain carries mutual information. The decoder's own global
  score is an entropy expectation instead; both readings are implemented
  and reports surface which one is in play.

* Monte-Carlo study of noisy top-of-K selection: empirical flip rate versus
  the analytic union bound, the mean of the maximal noise versus the
  leading-order extreme-value prediction sqrt(2 ln K), and the realized
  regret of the selected candidate.

* per-step agreement between local-only and combined selection, and the
  downstream influence of swapping the decode choice at one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NoMaskedPositions, SequenceState
from .decoders import BlockSchedule, argmax_token, whole_sequence_schedule
from .fdm import FdmConfig, fdm_step, generate_candidates
from .models import (
    EnumerationTooLarge,
    JointTable,
    ModelBackend,
    OracleBackend,
)

TRAJECTORY_ENUMERATION_BOUND = 10**5


@dataclass(frozen=True)
class PolicyDistribution:
    """Softmax policy over candidate extensions."""

    support: tuple
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("policy probabilities must normalize within 1e-12")
        object.__setattr__(self, "probs", p)


def softmax_policy(scores, support=None) -> PolicyDistribution:
    """Max-subtracted exponential normalization of finite scores."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    z = np.exp(s - s.max())
    z /= z.sum()
    sup = tuple(support) if support is not None else tuple(range(len(s)))
    return PolicyDistribution(support=sup, probs=z)


@dataclass(frozen=True)
class TheoremReport:
    """KL decomposition of one joint: combined-policy error, local-policy
    error, total conditional mutual information, and the identity residual."""

    kl_F: float
    kl_H: float
    delta_total: float

    @property
    def residual(self) -> float:
        return self.kl_F - (self.kl_H - self.delta_total)

    def to_json(self) -> dict:
        return {"kl_F": self.kl_F, "kl_H": self.kl_H,
                "delta_total": self.delta_total, "residual": self.residual}


def _context_quantities(sub: np.ndarray, qsub: np.ndarray) -> tuple[float, float, float]:
    """Per-context eps_H, eps_F, and mutual information.

    ``sub``: data mass over (v, u) given the prefix, axis 0 = next token v,
    remaining axes = completion u. ``qsub``: model mass, same shape.
    Returns unnormalized-context contributions already conditioned (inputs
    must sum to 1).
    """
    m = sub.shape[0]
    u_axes = tuple(range(1, sub.ndim))
    pv = sub.sum(axis=u_axes) if u_axes else sub.copy()
    qv = qsub.sum(axis=u_axes) if u_axes else qsub.copy()

    with np.errstate(divide="ignore", invalid="ignore"):
        log_pv = np.where(pv > 0, np.log(np.where(pv > 0, pv, 1.0)), 0.0)
        log_qv = np.where(qv > 0, np.log(np.where(qv > 0, qv, 1.0)), -1e9)

    eps_h = float(np.sum(np.where(pv > 0, pv * (log_pv - log_qv), 0.0)))

    if not u_axes:
        # final step: empty completion, policy reduces to the local one
        return eps_h, eps_h, 0.0

    # p(u | prefix) and model conditional q(u | prefix, v)
    pu = sub.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        q_u_given_v = np.where(qv.reshape((m,) + (1,) * len(u_axes)) > 0,
                               qsub / np.where(qv.reshape((m,) + (1,) * len(u_axes)) > 0,
                                               qv.reshape((m,) + (1,) * len(u_axes)), 1.0),
                               0.0)

    # log policy per fixed target u: softmax_v(log qv + log q(u | prefix, v));
    # flatten u for the vectorized softmax
    flat = q_u_given_v.reshape(m, -1)
    scores = np.where(flat > 0, np.log(np.where(flat > 0, flat, 1.0)), -1e9) + \
        log_qv.reshape(m, 1)
    smax = scores.max(axis=0, keepdims=True)
    expd = np.exp(scores - smax)
    log_policy = scores - (smax + np.log(expd.sum(axis=0, keepdims=True)))

    joint_flat = sub.reshape(m, -1)
    eps_f = float(np.sum(np.where(joint_flat > 0,
                                  joint_flat * (log_pv.reshape(m, 1) - log_policy),
                                  0.0)))

    pu_flat = pu.reshape(1, -1)
    denom = pv.reshape(m, 1) * pu_flat
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((joint_flat > 0) & (denom > 0), joint_flat / np.where(denom > 0, denom, 1.0), 1.0)
    mi = float(np.sum(np.where(joint_flat > 0, joint_flat * np.log(ratio), 0.0)))
    return eps_h, eps_f, mi


def verify_theorem1(joint: JointTable, model: JointTable | None = None) -> TheoremReport:
    """Enumerate the left-to-right single-token chain and accumulate the KL
    decomposition. With ``model`` omitted the model equals the data joint and
    the residual vanishes up to float noise; with a mismatched model the
    residual is reported descriptively.
    """
    L, m = joint.length, joint.vocab_size
    if L * m ** L > TRAJECTORY_ENUMERATION_BOUND:
        raise EnumerationTooLarge(
            f"L * m^L = {L * m**L} exceeds {TRAJECTORY_ENUMERATION_BOUND}"
        )
    p_cube = joint.cube
    q_cube = p_cube if model is None else model.cube
    if model is not None and (model.length != L or model.vocab_size != m):
        raise ValueError("model joint must match the data joint's shape")

    kl_h = 0.0
    kl_f = 0.0
    delta = 0.0
    for t in range(L):
        # prefixes of length t over the first t positions
        for prefix in np.ndindex(*((m,) * t)):
            sub = p_cube[prefix]
            weight = float(sub.sum())
            if weight <= 0.0:
                continue
            qsub = q_cube[prefix]
            q_weight = float(qsub.sum())
            if q_weight <= 0.0:
                continue
            eps_h, eps_f, mi = _context_quantities(sub / weight, qsub / q_weight)
            kl_h += weight * eps_h
            kl_f += weight * eps_f
            delta += weight * mi
    return TheoremReport(kl_F=kl_f, kl_H=kl_h, delta_total=delta)


@dataclass(frozen=True)
class WinnersCurseRow:
    """Monte-Carlo summary for one search width."""

    K: int
    flip_rate: float
    flip_se: float
    union_bound: float
    mean_max_noise: float
    max_noise_se: float
    mean_regret: float
    regret_se: float
    evt_prediction: float
    evt_corrected: float

    def to_json(self) -> dict:
        return {
            "K": self.K, "flip_rate": self.flip_rate, "flip_se": self.flip_se,
            "union_bound": self.union_bound,
            "mean_max_noise": self.mean_max_noise, "max_noise_se": self.max_noise_se,
            "mean_regret": self.mean_regret, "regret_se": self.regret_se,
            "evt_prediction": self.evt_prediction, "evt_corrected": self.evt_corrected,
        }


def _phi_lower(x: float) -> float:
    """Standard normal CDF at x (i.e. the tail mass below x)."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def evt_mean_max(K: int) -> float:
    """Leading-order extreme-value prediction for E[max of K standard
    normals]."""
    return math.sqrt(2.0 * math.log(K)) if K > 1 else 0.0

def evt_mean_max_corrected(K: int) -> float:
    """Gumbel-limit prediction with the second-order location correction and
    the Euler-Mascheroni mean shift. Markedly closer than sqrt(2 ln K) at
    moderate K."""
    if K < 2:
        return 0.0
    c = math.sqrt(2.0 * math.log(K))
    b = c - (math.log(math.log(K)) + math.log(4.0 * math.pi)) / (2.0 * c)
    return b + 0.5772156649015329 / c


def winners_curse(
    K_values,
    sigma: float,
    gaps,
    trials: int,
    seed: int,
    batches: int = 32,
) -> list[WinnersCurseRow]:
    """Simulate noisy selection among K candidates.

    True returns are 0 for the optimum and -gap_i for the others (the gap
    list is tiled to K-1 entries). Estimates add iid N(0, sigma^2) noise and
    the argmax is selected, ties resolving to the optimum first. Standard
    errors come from batch means (>= 30 batches).
    """
    if trials < batches:
        raise ValueError(f"trials must be >= batches ({batches})")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    gap_arr = np.asarray(list(gaps), dtype=np.float64)
    if gap_arr.size and np.any(gap_arr < 0):
        raise ValueError("gaps must be nonnegative")

    rows = []
    for K in K_values:
        K = int(K)
        delta = np.zeros(K)
        if K > 1:
            if gap_arr.size == 0:
                raise ValueError("need at least one gap value for K > 1")
            delta[1:] = np.resize(gap_arr, K - 1)
        s_true = -delta

        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, K])))
        per_batch = trials // batches
        flip_b = np.empty(batches)
        regret_b = np.empty(batches)
        maxn_b = np.empty(batches)
        for i in range(batches):
            noise = rng.standard_normal((per_batch, K)) * sigma
            est = s_true + noise
            sel = np.argmax(est, axis=1)  # first index wins ties -> optimum
            flip_b[i] = np.mean(sel != 0)
            regret_b[i] = np.mean(delta[sel])
            maxn_b[i] = np.mean(noise.max(axis=1))

        def _mean_se(x):
            return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))

        flip, flip_se = _mean_se(flip_b)
        regret, regret_se = _mean_se(regret_b)
        maxn, maxn_se = _mean_se(maxn_b)

        if K > 1:
            if sigma > 0:
                bound = float(sum(_phi_lower(-d / (math.sqrt(2.0) * sigma))
                                  for d in delta[1:]))
            else:
                bound = float(sum(0.5 if d == 0 else 0.0 for d in delta[1:]))
        else:
            bound = 0.0

        rows.append(WinnersCurseRow(
            K=K, flip_rate=flip, flip_se=flip_se, union_bound=bound,
            mean_max_noise=maxn, max_noise_se=maxn_se,
            mean_regret=regret, regret_se=regret_se,
            evt_prediction=sigma * evt_mean_max(K),
            evt_corrected=sigma * evt_mean_max_corrected(K),
        ))
    return rows


def _local_choice(output, active: list[int]) -> tuple[int, int]:
    """Greedy local selection: most confident active masked position (ties
    to the lowest index) and its argmax token."""
    best = min(active, key=lambda j: (-float(output.probs[j].max()), j))
    return best, argmax_token(output.probs[best])


def consistency_ratio(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule | None,
    cfg: FdmConfig,
) -> list[float]:
    """Per-step agreement (1.0 / 0.0) between local-only selection and the
    combined lookahead selection, both judged from the same state; the
    trajectory advances with the combined choice. Requires one token per
    step."""
    if cfg.n != 1:
        raise ValueError("consistency probe requires a one-token-per-step config")
    sched = schedule if schedule is not None else whole_sequence_schedule(length)
    state = SequenceState.fully_masked(length)
    ratios: list[float] = []
    while not state.is_complete():
        active = sched.active_masked(state)
        base = backend.evaluate(state)
        local = _local_choice(base, active)
        state, trace = fdm_step(backend, state, sched, cfg, base_output=base)
        chosen = trace.assignments[0]
        ratios.append(1.0 if (chosen.position, chosen.token) == local else 0.0)
    return ratios


def consistency_curve(
    backends,
    length: int,
    schedule: BlockSchedule | None,
    cfg: FdmConfig,
) -> np.ndarray:
    """Ensemble mean of per-step agreement over same-length trajectories."""
    curves = [consistency_ratio(b, length, schedule, cfg) for b in backends]
    return np.asarray(curves, dtype=np.float64).mean(axis=0)


def order_influence(
    backend: ModelBackend,
    length: int,
    schedule: BlockSchedule | None,
    t_probe: int,
) -> int:
    """Hamming distance between the completions reached from the two most
    confident alternatives at step ``t_probe`` (counting only positions
    decoded after the branch point). The prefix and both continuations use
    probability-greedy decoding. Returns 0 when fewer than two alternatives
    exist."""
    if not 0 <= t_probe < length:
        raise ValueError(f"t_probe must lie in [0, {length}), got {t_probe}")
    sched = schedule if schedule is not None else whole_sequence_schedule(length)
    state = SequenceState.fully_masked(length)
    for _ in range(t_probe):
        state = _greedy_advance(backend, state, sched)
    base = backend.evaluate(state)
    pool = generate_candidates(base, state, 0.0, sched)
    if len(pool) < 2:
        return 0
    top2 = pool[:2]
    finals = []
    for cand in top2:
        from .core import apply_assignments

        branch = apply_assignments(state, (cand,))
        while not branch.is_complete():
            branch = _greedy_advance(backend, branch, sched)
        finals.append(branch.tokens)
    branch_positions = {top2[0].position, top2[1].position}
    return sum(
        1
        for j in range(length)
        if j not in branch_positions and finals[0][j] != finals[1][j]
    )


def _greedy_advance(backend: ModelBackend, state: SequenceState,
                    schedule: BlockSchedule) -> SequenceState:
    active = schedule.active_masked(state)
    if not active:
        raise NoMaskedPositions("no active masked positions")
    output = backend.evaluate(state)
    j, tok = _local_choice(output, active)
    from .core import apply_assignments, assignment_from_output

    return apply_assignments(state, (assignment_from_output(output, j, tok),))


def order_influence_curve(
    joints,
    length: int,
    schedule: BlockSchedule | None,
    probes,
) -> dict[int, float]:
    """Mean branch divergence per probe step over an ensemble of joints."""
    out = {}
    for t in probes:
        vals = [order_influence(OracleBackend(j), length, schedule, t) for j in joints]
        out[int(t)] = float(np.mean(vals))
    return out
