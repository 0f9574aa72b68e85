"""Model backends: an exact enumerable oracle over an explicit joint table,
a controlled perturbation wrapper, a call-counting wrapper, and seeded joint
generators.

The joint table is the only built-in ground truth. Conditioning an oracle on
a zero-mass context is an error, never a silent uniform fallback, so KL
checks cannot be corrupted by accident.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import (
    MASK,
    DecodingError,
    ModelOutput,
    SequenceState,
    masked_positions,
)

ENUMERABILITY_BOUND = 10**7


class ZeroConditioningMass(DecodingError):
    pass


class EnumerationTooLarge(DecodingError):
    pass


def encode_sequence(tokens, m: int) -> int:
    """Base-m index of a full sequence; position 0 is the most significant digit."""
    idx = 0
    for t in tokens:
        idx = idx * m + int(t)
    return idx


def decode_index(index: int, length: int, m: int) -> tuple[int, ...]:
    out = [0] * length
    for j in range(length - 1, -1, -1):
        out[j] = index % m
        index //= m
    return tuple(out)


@dataclass(frozen=True)
class JointTable:
    """Explicit joint probability table over all length-L sequences.

    ``mass[i]`` is the probability of the sequence whose base-m encoding is
    ``i`` (position 0 most significant).
    """

    length: int
    vocab_size: int
    mass: np.ndarray

    def __post_init__(self) -> None:
        if self.vocab_size ** self.length > ENUMERABILITY_BOUND:
            raise EnumerationTooLarge(
                f"m^L = {self.vocab_size}^{self.length} exceeds {ENUMERABILITY_BOUND}"
            )
        mass = np.asarray(self.mass, dtype=np.float64)
        expected = self.vocab_size ** self.length
        if mass.shape != (expected,):
            raise ValueError(f"mass must have {expected} entries, got {mass.shape}")
        if np.any(mass < 0.0):
            raise ValueError("mass entries must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {total}, not 1 within 1e-9")
        object.__setattr__(self, "mass", mass)

    @property
    def cube(self) -> np.ndarray:
        """The mass reshaped to an L-dimensional (m, ..., m) array."""
        return self.mass.reshape((self.vocab_size,) * self.length)

    def prob(self, tokens) -> float:
        return float(self.mass[encode_sequence(tokens, self.vocab_size)])

    def to_json(self) -> dict:
        return {"L": self.length, "m": self.vocab_size, "mass": self.mass.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "JointTable":
        return cls(length=int(obj["L"]), vocab_size=int(obj["m"]),
                   mass=np.asarray(obj["mass"], dtype=np.float64))


def conditional_marginals(joint: JointTable, state: SequenceState) -> ModelOutput:
    """Exact per-position conditionals of ``joint`` given the unmasked context.

    For each masked position j and token v the output row is
    P(x_j = v | unmasked tokens); unmasked positions get a point mass on
    their token. Raises ZeroConditioningMass when the context has no mass.
    """
    if state.length != joint.length:
        raise ValueError(f"state length {state.length} != joint length {joint.length}")
    m = joint.vocab_size
    cube = joint.cube
    slicer = tuple(
        slice(None) if t == MASK else int(t) for t in state.tokens
    )
    sub = cube[slicer]
    total = float(sub.sum())
    if total <= 0.0:
        raise ZeroConditioningMass(f"context {state.tokens} has zero probability mass")

    probs = np.zeros((joint.length, m), dtype=np.float64)
    masked = masked_positions(state)
    for axis, j in enumerate(masked):
        other = tuple(a for a in range(sub.ndim) if a != axis)
        marg = sub.sum(axis=other) if other else np.asarray(sub, dtype=np.float64)
        probs[j] = marg / total
    for j, t in enumerate(state.tokens):
        if t != MASK:
            probs[j, t] = 1.0
    return ModelOutput(probs=probs)


def joint_argmax(joint: JointTable) -> tuple[int, ...]:
    """Sequence of maximal mass; ties break to the smallest base-m encoding."""
    idx = int(np.argmax(joint.mass))
    return decode_index(idx, joint.length, joint.vocab_size)


class ModelBackend:
    """Deterministic map from a partially masked state to per-position
    distributions. Implementations must be safe to duplicate per worker."""

    def evaluate(self, state: SequenceState) -> ModelOutput:
        raise NotImplementedError


class OracleBackend(ModelBackend):
    """Backend whose predictions are the exact conditionals of a joint table."""

    def __init__(self, joint: JointTable):
        self.joint = joint

    def evaluate(self, state: SequenceState) -> ModelOutput:
        return conditional_marginals(self.joint, state)


class MixtureBackend(ModelBackend):
    """(1 - eps) * inner + eps * Uniform(m) at masked positions.

    Deterministic: eps is a mixing weight, not sampled noise.
    """

    def __init__(self, inner: ModelBackend, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.inner = inner
        self.epsilon = epsilon

    def evaluate(self, state: SequenceState) -> ModelOutput:
        out = self.inner.evaluate(state)
        if self.epsilon == 0.0:
            return out
        m = out.vocab_size
        probs = out.probs.copy()
        uniform = 1.0 / m
        for j in masked_positions(state):
            probs[j] = (1.0 - self.epsilon) * probs[j] + self.epsilon * uniform
        return ModelOutput(probs=probs)


class GumbelNoiseBackend(ModelBackend):
    """Adds per-position Gumbel noise to masked-row log probabilities, then
    renormalizes. Noise is derived from (seed, state tokens, position) so the
    backend stays deterministic per state.
    """

    def __init__(self, inner: ModelBackend, scale: float, seed: int):
        if scale < 0.0:
            raise ValueError(f"scale must be >= 0, got {scale}")
        self.inner = inner
        self.scale = scale
        self.seed = seed

    def evaluate(self, state: SequenceState) -> ModelOutput:
        out = self.inner.evaluate(state)
        if self.scale == 0.0:
            return out
        probs = out.probs.copy()
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32] + [t + 1 for t in state.tokens]
        for j in masked_positions(state):
            seq = np.random.SeedSequence(entropy + [j])
            rng = np.random.Generator(np.random.Philox(seq))
            noise = rng.gumbel(0.0, self.scale, size=probs.shape[1])
            logits = np.where(probs[j] > 0.0, np.log(probs[j], where=probs[j] > 0.0), -np.inf)
            logits = logits + noise
            logits -= logits.max()
            row = np.exp(logits)
            probs[j] = row / row.sum()
        return ModelOutput(probs=probs)


def perturb(backend: ModelBackend, epsilon: float, seed: int = 0,
            mode: str = "mixture") -> ModelBackend:
    """Wrap a backend in controlled perturbation.

    ``mixture`` (default): deterministic uniform mixing with weight epsilon;
    the seed is unused. ``gumbel``: state-keyed Gumbel noise of scale epsilon
    on log probabilities, seeded.
    """
    if mode == "mixture":
        return MixtureBackend(backend, epsilon)
    if mode == "gumbel":
        return GumbelNoiseBackend(backend, epsilon, seed)
    raise ValueError(f"unknown perturbation mode {mode!r}")


class CallCounter(ModelBackend):
    """Counts evaluate() invocations; the artifact's efficiency meter."""

    def __init__(self, inner: ModelBackend):
        self.inner = inner
        self.count = 0

    def evaluate(self, state: SequenceState) -> ModelOutput:
        self.count += 1
        return self.inner.evaluate(state)

    def reset(self) -> None:
        self.count = 0


# --------------------------------------------------------------------------
# Seeded joint generators.
#
# All randomness flows through numpy's Philox counter-based bit generator
# (splittable via SeedSequence), so fixture sets are reproducible from a
# single 64-bit master seed.
# --------------------------------------------------------------------------


def _rng(seed_entropy: list[int]) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_entropy)))


def stream_entropy(seed: int, *parts: int | str) -> list[int]:
    """Derive an independent PRNG stream key from the master seed and a path
    of identifying parts. String parts hash via crc32 so streams are keyed by
    identity, not spawn order."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF]
    for p in parts:
        if isinstance(p, str):
            entropy.append(zlib.crc32(p.encode("utf-8")))
        else:
            entropy.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return entropy


def independent_table(length: int, m: int, rng: np.random.Generator) -> JointTable:
    """Product of per-position random categoricals (Dirichlet(1) rows)."""
    cube = np.ones((), dtype=np.float64)
    for _ in range(length):
        row = rng.dirichlet(np.ones(m))
        cube = np.multiply.outer(cube, row)
    mass = cube.reshape(-1)
    return JointTable(length, m, mass / mass.sum())


def markov_table(length: int, m: int, rng: np.random.Generator) -> JointTable:
    """First-order chain: random initial distribution and transition rows."""
    init = rng.dirichlet(np.ones(m))
    trans = np.stack([rng.dirichlet(np.ones(m)) for _ in range(m)])
    mass = np.zeros(m ** length, dtype=np.float64)
    for idx in range(m ** length):
        seq = decode_index(idx, length, m)
        p = init[seq[0]]
        for a, b in zip(seq, seq[1:]):
            p *= trans[a, b]
        mass[idx] = p
    return JointTable(length, m, mass / mass.sum())


def _greedy_marginal_sequence(joint: JointTable) -> tuple[int, ...]:
    """Position-wise marginal argmax (no sequential conditioning)."""
    out = conditional_marginals(joint, SequenceState.fully_masked(joint.length))
    return tuple(int(np.argmax(out.probs[j])) for j in range(joint.length))


def _xor_pair_table(length: int, m: int, rng: np.random.Generator) -> JointTable:
    """Two high-mass sequences that disagree on a swapped token pair, plus
    background noise. Marginals at the pair sit near 1/2, so the marginal
    argmax lands off the joint argmax."""
    size = m ** length
    base = [int(rng.integers(m)) for _ in range(length)]
    j0, j1 = sorted(rng.choice(length, size=2, replace=False).tolist())
    a, b = 0, 1
    s1 = list(base)
    s2 = list(base)
    s1[j0], s1[j1] = a, b
    s2[j0], s2[j1] = b, a
    w1 = 0.44 + 0.02 * rng.random()
    w2 = w1 - (0.01 + 0.03 * rng.random())
    bg = rng.dirichlet(np.ones(size)) * (1.0 - w1 - w2)
    mass = bg.copy()
    mass[encode_sequence(s1, m)] += w1
    mass[encode_sequence(s2, m)] += w2
    return JointTable(length, m, mass / mass.sum())


def _deceptive_table(length: int, m: int, rng: np.random.Generator) -> JointTable:
    """A joint whose most confident marginal points away from the argmax.

    One 'decoy' token at a chosen position collects more marginal mass than
    any token of the true argmax sequence, but that mass is spread over
    several distinct continuations. Committing the decoy leads into a
    high-entropy cloud; committing a correct token elsewhere collapses the
    conditional onto the argmax. Greedy confidence ranking falls for the
    decoy; lookahead scoring does not.
    """
    size = m ** length
    target = tuple(int(t) for t in rng.integers(0, m, size=length))
    jd = int(rng.integers(length))
    others = [t for t in range(m) if t != target[jd]]
    decoy_tok = int(others[rng.integers(len(others))])

    w_target = 0.34 + 0.04 * rng.random()
    w_decoys = w_target + 0.15 + 0.04 * rng.random()
    overlap = 0.24 + 0.06 * rng.random()        # decoy mass landing on target tokens
    n_decoys = int(rng.integers(3, 6))

    decoys: list[tuple[int, ...]] = []
    attempts = 0
    while len(decoys) < n_decoys and attempts < 200:
        attempts += 1
        seq = []
        for j in range(length):
            if j == jd:
                seq.append(decoy_tok)
            elif rng.random() < overlap:
                seq.append(target[j])
            else:
                alt = [t for t in range(m) if t != target[j]]
                seq.append(int(alt[rng.integers(len(alt))]))
        seq = tuple(seq)
        if seq != target and seq not in decoys:
            decoys.append(seq)

    bg = rng.dirichlet(np.ones(size)) * max(1.0 - w_target - w_decoys, 0.02)
    mass = bg.copy()
    mass[encode_sequence(target, m)] += w_target
    share = w_decoys / len(decoys)
    for seq in decoys:
        mass[encode_sequence(seq, m)] += share
    return JointTable(length, m, mass / mass.sum())


def anticorrelated_table(length: int, m: int, rng: np.random.Generator,
                         max_tries: int = 300) -> JointTable:
    """Joint where the position-wise marginal argmax conflicts with the joint
    argmax in at least one position (verified on every emitted table)."""
    if length < 2:
        raise ValueError("anticorrelated family requires L >= 2")
    build = _xor_pair_table if m == 2 else _deceptive_table
    for _ in range(max_tries):
        table = build(length, m, rng)
        if _greedy_marginal_sequence(table) != joint_argmax(table):
            return table
    raise RuntimeError("failed to draw an anticorrelated table; widen the family")


GENERATORS = {
    "independent": independent_table,
    "markov": markov_table,
    "anticorrelated": anticorrelated_table,
}
