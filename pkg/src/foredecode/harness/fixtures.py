"""Deterministic fixture generation: seeded joint tables per family."""

from __future__ import annotations

import json
from pathlib import Path

from ..models import GENERATORS, JointTable, _rng, stream_entropy


def generate_fixtures(family: str, count: int, length: int, vocab_size: int,
                      seed: int) -> list[JointTable]:
    """Seeded list of joint tables. Each fixture gets its own PRNG stream
    keyed by (seed, family, index), so fixture i is independent of how many
    others are drawn."""
    if family not in GENERATORS:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(GENERATORS)}")
    gen = GENERATORS[family]
    tables = []
    for i in range(count):
        rng = _rng(stream_entropy(seed, "fixture", family, i))
        tables.append(gen(length, vocab_size, rng))
    return tables


def write_fixtures(tables: list[JointTable], out_dir, family: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(tables):
        p = out / f"{family}_{i:04d}.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(t.to_json(), fh)
        paths.append(p)
    return paths


def read_fixture(path) -> JointTable:
    with open(path, "r", encoding="utf-8") as fh:
        return JointTable.from_json(json.load(fh))
