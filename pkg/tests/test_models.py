import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foredecode.core import MASK, SequenceState
from foredecode.models import (
    CallCounter,
    EnumerationTooLarge,
    JointTable,
    OracleBackend,
    ZeroConditioningMass,
    anticorrelated_table,
    conditional_marginals,
    decode_index,
    encode_sequence,
    independent_table,
    joint_argmax,
    markov_table,
    perturb,
    _greedy_marginal_sequence,
    _rng,
)

from conftest import random_joint


def brute_conditional(joint: JointTable, state: SequenceState, pos: int) -> np.ndarray:
    """Independent oracle: enumerate all full sequences consistent with the
    unmasked context and sum mass per token at ``pos``."""
    m, L = joint.vocab_size, joint.length
    num = np.zeros(m)
    den = 0.0
    for idx in range(m ** L):
        seq = decode_index(idx, L, m)
        if any(t != MASK and seq[j] != t for j, t in enumerate(state.tokens)):
            continue
        den += joint.mass[idx]
        num[seq[pos]] += joint.mass[idx]
    return num / den


def test_encoding_roundtrip():
    for idx in range(27):
        assert encode_sequence(decode_index(idx, 3, 3), 3) == idx
    # position 0 is the most significant digit
    assert encode_sequence((1, 0), 2) == 2


def test_joint_table_validation():
    with pytest.raises(ValueError):
        JointTable(2, 2, np.array([0.5, 0.5, 0.5, 0.5]))
    with pytest.raises(EnumerationTooLarge):
        JointTable(30, 4, np.zeros(1))


def test_conditional_example(skewed_table):
    out = conditional_marginals(skewed_table, SequenceState.from_json([0, MASK]))
    np.testing.assert_allclose(out.probs[1], [0.8, 0.2], atol=1e-12)
    # unmasked positions carry a point mass
    np.testing.assert_allclose(out.probs[0], [1.0, 0.0], atol=0)


def test_conditional_factorizes_for_independent_joint():
    f = np.array([0.3, 0.7])
    g = np.array([0.9, 0.1])
    mass = np.outer(f, g).reshape(-1)
    joint = JointTable(2, 2, mass)
    out = conditional_marginals(joint, SequenceState.fully_masked(2))
    np.testing.assert_allclose(out.probs[0], f, atol=1e-12)
    np.testing.assert_allclose(out.probs[1], g, atol=1e-12)


def test_conditional_fully_unmasked_is_point_mass(skewed_table):
    out = conditional_marginals(skewed_table, SequenceState.from_json([1, 0]))
    np.testing.assert_allclose(out.probs[0], [0.0, 1.0])
    np.testing.assert_allclose(out.probs[1], [1.0, 0.0])


def test_conditional_zero_mass_context():
    mass = np.array([0.5, 0.5, 0.0, 0.0])
    joint = JointTable(2, 2, mass)
    with pytest.raises(ZeroConditioningMass):
        conditional_marginals(joint, SequenceState.from_json([1, MASK]))


@given(st.integers(0, 10_000), st.integers(2, 3), st.integers(2, 3))
@settings(max_examples=60, deadline=None)
def test_conditional_matches_bruteforce(seed, L, m):
    joint = random_joint(L, m, seed)
    rng = np.random.default_rng(seed + 1)
    tokens = [int(rng.integers(m)) if rng.random() < 0.5 else MASK for _ in range(L)]
    if MASK not in tokens:
        tokens[0] = MASK
    state = SequenceState.from_json(tokens)
    out = conditional_marginals(joint, state)
    for j, t in enumerate(tokens):
        if t == MASK:
            np.testing.assert_allclose(out.probs[j], brute_conditional(joint, state, j),
                                       atol=1e-12)


def test_conditional_chaining_consistency():
    # conditioning on the argmax token then re-evaluating equals the
    # Bayesian restriction of the joint (enumerated independently)
    joint = random_joint(3, 2, 99)
    state = SequenceState.fully_masked(3)
    out = conditional_marginals(joint, state)
    tok = int(np.argmax(out.probs[0]))
    restricted = conditional_marginals(joint, SequenceState.from_json([tok, MASK, MASK]))
    for j in (1, 2):
        np.testing.assert_allclose(
            restricted.probs[j],
            brute_conditional(joint, SequenceState.from_json([tok, MASK, MASK]), j),
            atol=1e-12,
        )


def test_joint_argmax_tie_breaks_to_smallest_encoding(skewed_table):
    assert joint_argmax(skewed_table) == (0, 0)


def test_joint_argmax_point_mass():
    mass = np.zeros(8)
    mass[5] = 1.0
    assert joint_argmax(JointTable(3, 2, mass)) == decode_index(5, 3, 2)


def test_joint_argmax_exhaustive_scan():
    joint = random_joint(3, 3, 424242)
    best = max(range(27), key=lambda i: (joint.mass[i], -i))
    assert joint_argmax(joint) == decode_index(best, 3, 3)


def test_perturb_examples(skewed_table):
    inner = OracleBackend(skewed_table)
    state = SequenceState.from_json([0, MASK])
    np.testing.assert_allclose(
        perturb(inner, 0.0).evaluate(state).probs[1],
        inner.evaluate(state).probs[1])
    np.testing.assert_allclose(
        perturb(inner, 1.0).evaluate(state).probs[1], [0.5, 0.5])
    np.testing.assert_allclose(
        perturb(inner, 0.5).evaluate(state).probs[1], [0.65, 0.35], atol=1e-12)


@given(st.floats(0.0, 1.0), st.integers(0, 5000))
@settings(max_examples=100, deadline=None)
def test_perturb_preserves_normalization(eps, seed):
    joint = random_joint(3, 3, seed)
    backend = perturb(OracleBackend(joint), eps)
    out = backend.evaluate(SequenceState.fully_masked(3))
    np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-9)


def test_gumbel_mode_is_deterministic_and_normalized():
    joint = random_joint(3, 3, 5)
    backend = perturb(OracleBackend(joint), 0.3, seed=11, mode="gumbel")
    state = SequenceState.from_json([MASK, 2, MASK])
    a = backend.evaluate(state)
    b = backend.evaluate(state)
    np.testing.assert_array_equal(a.probs, b.probs)
    np.testing.assert_allclose(a.probs.sum(axis=1), 1.0, atol=1e-9)
    other = perturb(OracleBackend(joint), 0.3, seed=12, mode="gumbel")
    assert not np.array_equal(other.evaluate(state).probs, a.probs)


def test_call_counter_counts_and_resets():
    joint = random_joint(2, 2, 8)
    counter = CallCounter(OracleBackend(joint))
    state = SequenceState.fully_masked(2)
    counter.evaluate(state)
    counter.evaluate(state)
    assert counter.count == 2
    counter.reset()
    assert counter.count == 0


def test_generators_are_seed_deterministic():
    for gen in (independent_table, markov_table, anticorrelated_table):
        a = gen(3, 3, _rng([123]))
        b = gen(3, 3, _rng([123]))
        np.testing.assert_array_equal(a.mass, b.mass)


def test_markov_table_is_first_order():
    table = markov_table(4, 2, _rng([77]))
    # verify conditional independence: p(x2 | x0, x1) depends only on x1
    cube = table.cube
    for x1 in range(2):
        conds = []
        for x0 in range(2):
            sub = cube[x0, x1].sum(axis=-1)
            conds.append(sub / sub.sum())
        np.testing.assert_allclose(conds[0], conds[1], atol=1e-12)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_anticorrelated_marginal_conflict(m):
    for seed in range(10):
        table = anticorrelated_table(4, m, _rng([seed]))
        assert _greedy_marginal_sequence(table) != joint_argmax(table)
