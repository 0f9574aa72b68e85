"""Acceptance gate: one test per criterion, each printing a pass/fail line
(also echoed in the terminal summary).

The shared ensemble for the decoder-comparison criteria is 200 seeded
anticorrelated fixtures at L=6, m=3 with master seed 7.
"""

import json
import time

import numpy as np
import pytest

from foredecode.analysis import consistency_curve, verify_theorem1, winners_curse
from foredecode.core import MASK, SequenceState
from foredecode.decoders import (
    HeuristicScorer,
    ScorerKind,
    heuristic_step,
    whole_sequence_schedule,
)
from foredecode.fdm import FdmConfig, fdm_step
from foredecode.fdma import FdmaConfig, Phase, fdma_step, phase_from_counts
from foredecode.harness import (
    DecoderSpec,
    ExperimentConfig,
    FixtureSpec,
    generate_fixtures,
    run_grid,
    run_trajectory,
)
from foredecode.harness.runner import strip_wall_fields
from foredecode.models import (
    CallCounter,
    JointTable,
    OracleBackend,
    decode_index,
    perturb,
)

from conftest import record_acceptance

ENSEMBLE_SEED = 7
ENSEMBLE_L = 6
ENSEMBLE_M = 3
ENSEMBLE_COUNT = 200


@pytest.fixture(scope="module")
def ensemble():
    return generate_fixtures("anticorrelated", ENSEMBLE_COUNT, ENSEMBLE_L,
                             ENSEMBLE_M, ENSEMBLE_SEED)


def _theorem_instances():
    """>= 100 random joints, L <= 4, m <= 3, mixed families."""
    shapes = [(2, 2), (3, 2), (3, 3), (4, 2), (4, 3)]
    families = ("independent", "markov", "anticorrelated")
    joints = []
    i = 0
    while len(joints) < 105:
        L, m = shapes[i % len(shapes)]
        family = families[i % len(families)]
        joints.append(generate_fixtures(family, 1, L, m, 1000 + i)[0])
        i += 1
    return joints


@pytest.fixture(scope="module")
def theorem_reports():
    joints = _theorem_instances()
    t0 = time.perf_counter()
    reports = [verify_theorem1(j) for j in joints]
    elapsed = time.perf_counter() - t0
    return reports, elapsed


def test_criterion_1_theorem_identity(theorem_reports):
    reports, elapsed = theorem_reports
    worst = max(abs(r.residual) for r in reports)
    ok = worst < 1e-9 and elapsed < 60.0
    record_acceptance(1, ok,
                      f"KL identity on {len(reports)} joints: max |residual| "
                      f"{worst:.2e} < 1e-9, runtime {elapsed:.2f}s < 60s")
    assert worst < 1e-9
    assert elapsed < 60.0


def test_criterion_2_kl_ordering(theorem_reports):
    reports, _ = theorem_reports
    violations = sum(1 for r in reports if not r.kl_F <= r.kl_H + 1e-9)
    ok = violations == 0
    record_acceptance(2, ok,
                      f"kl_F <= kl_H + 1e-9 on all {len(reports)} joints "
                      f"({violations} violations)")
    assert violations == 0


def _sample_prefix(joint: JointTable, rng: np.random.Generator) -> SequenceState:
    """Joint-consistent partial state: draw a full sequence, re-mask a random
    nonempty subset of positions."""
    idx = int(rng.choice(len(joint.mass), p=joint.mass))
    seq = list(decode_index(idx, joint.length, joint.vocab_size))
    n_mask = int(rng.integers(1, joint.length + 1))
    for j in rng.choice(joint.length, size=n_mask, replace=False):
        seq[j] = MASK
    return SequenceState.from_json(seq)


def _decode_both(joint: JointTable, start: SequenceState, n: int):
    sched = whole_sequence_schedule(joint.length)
    cfg = FdmConfig(K=1, gamma=0.0, n=n)
    scorer = HeuristicScorer(kind=ScorerKind.PROBABILITY)
    a, b = start, start
    traj_a, traj_b = [], []
    backend_a, backend_b = OracleBackend(joint), OracleBackend(joint)
    while not a.is_complete():
        a, tr = fdm_step(backend_a, a, sched, cfg)
        traj_a.append(tuple((x.position, x.token, x.logprob) for x in tr.assignments))
    while not b.is_complete():
        b, tr = heuristic_step(backend_b, b, sched, scorer, n)
        traj_b.append(tuple((x.position, x.token, x.logprob) for x in tr.assignments))
    return (a.tokens, traj_a), (b.tokens, traj_b)


def test_criterion_3_reduction_to_probability():
    rng = np.random.default_rng(1234)
    shapes = [(3, 2), (4, 2), (4, 3), (5, 2), (6, 3)]
    families = ("independent", "markov", "anticorrelated")
    mismatches = 0
    total = 0
    for i in range(1000):
        L, m = shapes[i % len(shapes)]
        family = families[i % len(families)]
        joint = generate_fixtures(family, 1, L, m, 5000 + i)[0]
        start = _sample_prefix(joint, rng)
        n = 1 if i < 800 else int(rng.integers(2, 4))
        res_fdm, res_heur = _decode_both(joint, start, n)
        total += 1
        if res_fdm != res_heur:
            mismatches += 1
    ok = mismatches == 0
    record_acceptance(3, ok,
                      f"width-1 lookahead == probability heuristic on {total} "
                      f"(fixture, prefix) instances ({mismatches} mismatches)")
    assert mismatches == 0


def test_criterion_4_call_accounting():
    """Observed per-step model calls equal the declared contract exactly,
    across all lookahead branches and controller phases."""
    rng = np.random.default_rng(99)
    violations = 0
    steps_checked = 0
    for i in range(120):
        L, m = [(4, 3), (5, 2), (6, 3)][i % 3]
        family = ("independent", "markov", "anticorrelated")[i % 3]
        joint = generate_fixtures(family, 1, L, m, 9000 + i)[0]
        backend = CallCounter(perturb(OracleBackend(joint), 0.05))
        sched = whole_sequence_schedule(L)
        state = SequenceState.fully_masked(L)
        use_fdma = i % 2 == 0
        cfg = FdmConfig(K=int(rng.integers(1, 5)),
                        gamma=float(rng.choice([0.0, 0.3, 0.5, 0.6, 1.0])),
                        n=int(rng.integers(1, 3)))
        acfg = FdmaConfig(N=int(rng.integers(1, 9)))
        while not state.is_complete():
            before = backend.count
            if use_fdma:
                state, trace = fdma_step(backend, state, sched, acfg)
            else:
                state, trace = fdm_step(backend, state, sched, cfg)
            observed = backend.count - before
            declared = trace.model_calls
            contract = 1 + (trace.lam_size if trace.lam_size >= 2 else 0)
            steps_checked += 1
            if not (observed == declared == contract):
                violations += 1
    ok = violations == 0
    record_acceptance(4, ok,
                      f"call contract exact on {steps_checked} steps "
                      f"({violations} violations, zero tolerance)")
    assert violations == 0


def test_criterion_5_phase_table_exhaustive():
    def reference(q, b, clip):
        if q == 0:
            return Phase.EXPLORATION
        elif q >= clip:
            return Phase.ACCELERATION_CLIPPED
        elif b == 0:
            return Phase.ACCELERATION
        else:
            return Phase.BALANCE

    mismatches = 0
    cases = 0
    for q in range(17):
        for b in range(17):
            for clip in range(1, 17):
                cases += 1
                if phase_from_counts(q, b, clip) is not reference(q, b, clip):
                    mismatches += 1
    ok = mismatches == 0 and cases == 4624
    record_acceptance(5, ok, f"phase branch table: {cases} cases, {mismatches} mismatches")
    assert cases == 4624
    assert mismatches == 0


@pytest.fixture(scope="module")
def curse_cells():
    # homogeneous gaps per cell: the monotonicity claim is specific to the
    # comparable-gap regime (mixed gaps genuinely break regret monotonicity;
    # see the decisions ledger)
    t0 = time.perf_counter()
    cells = {}
    for sigma in (0.5, 1.0):
        for gaps in ((0.25,), (0.5,)):
            cells[(sigma, gaps)] = winners_curse(
                [4, 16, 64, 256], sigma=sigma, gaps=list(gaps),
                trials=100_000, seed=2718)
    elapsed = time.perf_counter() - t0
    return cells, elapsed


def test_criterion_6_union_bound(curse_cells):
    cells, elapsed = curse_cells
    violations = []
    for (sigma, gaps), rows in cells.items():
        for r in rows:
            if not r.flip_rate <= r.union_bound + 3 * r.flip_se:
                violations.append((sigma, gaps, r.K))
    ok = not violations and elapsed < 30.0
    record_acceptance(6, ok,
                      f"flip rate <= union bound + 3 SE on "
                      f"{sum(len(v) for v in cells.values())} cells, "
                      f"runtime {elapsed:.1f}s < 30s")
    assert not violations
    assert elapsed < 30.0


def test_criterion_7_extreme_value_prediction():
    rows = winners_curse([16, 64, 256, 1024], sigma=1.0, gaps=[0.5],
                         trials=200_000, seed=31415)
    devs = {r.K: abs(r.mean_max_noise - r.evt_prediction) / r.evt_prediction
            for r in rows}
    ok = all(d <= 0.10 for d in devs.values())
    detail = ", ".join(
        f"K={r.K}: E[max]={r.mean_max_noise:.3f} vs sqrt(2lnK)={r.evt_prediction:.3f} "
        f"({100 * devs[r.K]:.1f}%)" for r in rows)
    record_acceptance(
        7, ok,
        "E[max of K gaussians] within 10% of sqrt(2 ln K): " + detail
        + ("" if ok else "  [leading-order EVT overshoots at these K; "
                         "see decisions ledger]"))
    assert ok, (
        "empirical E[max] deviates from sqrt(2 ln K) by more than 10% at "
        f"{ {K: round(100 * d, 1) for K, d in devs.items()} } percent; the "
        "leading-order extreme-value approximation is not 10%-accurate for "
        "K <= 1024 (quadrature gives the same empirical values)")


def test_criterion_8_monotonicity(curse_cells):
    cells, _ = curse_cells
    violations = []
    for (sigma, gaps), rows in cells.items():
        for a, b in zip(rows, rows[1:]):
            if not b.flip_rate >= a.flip_rate - 3 * (a.flip_se + b.flip_se):
                violations.append(("flip", sigma, gaps, a.K, b.K))
            if not b.mean_regret >= a.mean_regret - 3 * (a.regret_se + b.regret_se):
                violations.append(("regret", sigma, gaps, a.K, b.K))
    ok = not violations
    record_acceptance(8, ok,
                      f"flip rate and regret nondecreasing in K across "
                      f"{len(cells)} cells ({len(violations)} violations)")
    assert not violations


def _ensemble_stats(ensemble, spec, epsilon):
    recs = [run_trajectory(spec, t, "anticorrelated", i, ENSEMBLE_SEED + i,
                           None, epsilon)
            for i, t in enumerate(ensemble)]
    recovery = float(np.mean([r.recovery for r in recs]))
    log_mass = float(np.mean([r.log_mass for r in recs]))
    calls = int(np.sum([r.model_calls for r in recs]))
    return recovery, log_mass, calls


def test_criterion_9_directional_comparison(ensemble):
    rec_f, lm_f, _ = _ensemble_stats(
        ensemble, DecoderSpec(kind="fdm", K=4, gamma=0.3, n=1), epsilon=0.1)
    rec_p, lm_p, _ = _ensemble_stats(
        ensemble, DecoderSpec(kind="probability"), epsilon=0.1)
    ok = rec_f >= rec_p and lm_f >= lm_p
    record_acceptance(9, ok,
                      f"lookahead vs greedy on {len(ensemble)} fixtures (eps=0.1): "
                      f"recovery {rec_f:.3f} >= {rec_p:.3f}, "
                      f"log-mass {lm_f:.3f} >= {lm_p:.3f}")
    assert rec_f >= rec_p
    assert lm_f >= lm_p


def test_criterion_10_accelerated_efficiency(ensemble):
    # comparator: the criterion-9 lookahead config at width 2, one token per
    # step (gamma stays 0.3; see decisions ledger)
    rec_a, _, calls_a = _ensemble_stats(
        ensemble, DecoderSpec(kind="fdm-a"), epsilon=0.01)
    rec_f, _, calls_f = _ensemble_stats(
        ensemble, DecoderSpec(kind="fdm", K=2, gamma=0.3, n=1), epsilon=0.01)
    ratio = calls_a / calls_f
    drift = abs(rec_a - rec_f)
    ok = ratio <= 0.6 and drift <= 0.02
    record_acceptance(10, ok,
                      f"accelerated controller: calls {calls_a}/{calls_f} = "
                      f"{ratio:.3f} <= 0.6, recovery {rec_a:.3f} vs {rec_f:.3f} "
                      f"(|diff| {100 * drift:.1f}pp <= 2pp)")
    assert ratio <= 0.6
    assert drift <= 0.02


def test_criterion_11_consistency_rises(ensemble):
    backends = [perturb(OracleBackend(t), 0.1) for t in ensemble]
    curve = consistency_curve(backends, ENSEMBLE_L, None,
                              FdmConfig(K=4, gamma=0.3, n=1))
    ok = curve[-1] >= curve[0]
    record_acceptance(11, ok,
                      f"agreement ratio rises: first step {curve[0]:.3f} -> "
                      f"final step {curve[-1]:.3f}")
    assert curve[-1] >= curve[0]


def test_criterion_12_reproducibility(tmp_path):
    config = ExperimentConfig(
        seed=ENSEMBLE_SEED,
        fixtures=(FixtureSpec("anticorrelated", 40, ENSEMBLE_L, ENSEMBLE_M),),
        decoders=(DecoderSpec(kind="probability"),
                  DecoderSpec(kind="fdm", K=4, gamma=0.3, n=1),
                  DecoderSpec(kind="fdm-a")),
        epsilon=0.1,
    )
    run_grid(config, tmp_path / "a")
    run_grid(config, tmp_path / "b")

    def canonical(path):
        return [
            json.dumps(strip_wall_fields(json.loads(line)), sort_keys=True,
                       separators=(",", ":"))
            for line in open(path, encoding="utf-8")
        ]

    lines_a = canonical(tmp_path / "a" / "runs.jsonl")
    lines_b = canonical(tmp_path / "b" / "runs.jsonl")
    ok = lines_a == lines_b
    record_acceptance(12, ok,
                      f"two executions byte-identical excluding wall-time "
                      f"fields ({len(lines_a)} records)")
    assert lines_a == lines_b
