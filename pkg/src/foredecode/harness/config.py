"""Experiment configuration: a JSON-serializable description that fully
determines a run (modulo wall-clock fields). See docs/schema.md for the
frozen field names."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

DECODER_KINDS = ("random", "probability", "margin", "entropy", "fdm", "fdm-a")


@dataclass(frozen=True)
class DecoderSpec:
    """One decoder cell of the grid. Unused knobs are ignored by kinds that
    do not read them."""

    kind: str
    K: int = 2
    gamma: float = 0.6
    n: int = 1
    K1: int = 2
    gamma1: float = 0.5
    eta1: float = 0.8
    eta2: float = 0.7
    N: int = 8
    T: int | None = None          # fixed step budget for heuristic kinds
    block_global: bool = False

    def __post_init__(self) -> None:
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"decoder kind must be one of {DECODER_KINDS}, got {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "fdm":
            return f"fdm(K={self.K},gamma={self.gamma},n={self.n})"
        if self.kind == "fdm-a":
            return (f"fdm-a(K1={self.K1},gamma1={self.gamma1},"
                    f"eta1={self.eta1},eta2={self.eta2},N={self.N})")
        if self.T is not None:
            return f"{self.kind}(T={self.T})"
        return self.kind

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "K": self.K, "gamma": self.gamma, "n": self.n,
            "K1": self.K1, "gamma1": self.gamma1, "eta1": self.eta1,
            "eta2": self.eta2, "N": self.N, "T": self.T,
            "block_global": self.block_global,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecoderSpec":
        return cls(**{k: obj[k] for k in obj})


@dataclass(frozen=True)
class FixtureSpec:
    family: str
    count: int
    length: int
    vocab_size: int

    def to_json(self) -> dict:
        return {"family": self.family, "count": self.count,
                "L": self.length, "m": self.vocab_size}

    @classmethod
    def from_json(cls, obj: dict) -> "FixtureSpec":
        return cls(family=obj["family"], count=int(obj["count"]),
                   length=int(obj["L"]), vocab_size=int(obj["m"]))


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid of decoders x fixture families, plus oracle noise settings."""

    seed: int
    fixtures: tuple[FixtureSpec, ...]
    decoders: tuple[DecoderSpec, ...]
    block_size: int | None = None       # None -> whole sequence
    epsilon: float = 0.0
    noise_mode: str = "mixture"         # mixture | gumbel
    workers: int = 1

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "fixtures": [f.to_json() for f in self.fixtures],
            "decoders": [d.to_json() for d in self.decoders],
            "block_size": self.block_size,
            "epsilon": self.epsilon,
            "noise_mode": self.noise_mode,
            "workers": self.workers,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        return cls(
            seed=int(obj["seed"]),
            fixtures=tuple(FixtureSpec.from_json(f) for f in obj["fixtures"]),
            decoders=tuple(DecoderSpec.from_json(d) for d in obj["decoders"]),
            block_size=obj.get("block_size"),
            epsilon=float(obj.get("epsilon", 0.0)),
            noise_mode=obj.get("noise_mode", "mixture"),
            workers=int(obj.get("workers", 1)),
        )

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_json(json.load(fh))
