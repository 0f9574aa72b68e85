"""Grid execution: one trajectory per (decoder, fixture), JSONL artifacts,
and CSV summaries. Output is byte-reproducible except for wall-clock fields.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import RunRecord, safe_log
from ..decoders import (
    BlockSchedule,
    HeuristicScorer,
    ScorerKind,
    fixed_step_decode,
    greedy_decode,
    whole_sequence_schedule,
)
from ..fdm import FdmConfig, fdm_decode
from ..fdma import FdmaConfig, fdma_decode
from ..models import (
    CallCounter,
    JointTable,
    OracleBackend,
    _rng,
    joint_argmax,
    perturb,
    stream_entropy,
)
from .config import SCHEMA_VERSION, DecoderSpec, ExperimentConfig

WALL_FIELDS = ("wall_seconds", "tokens_per_second")

CSV_COLUMNS = (
    "schema_version", "decoder", "family", "L", "m", "n_fixtures",
    "mean_recovery", "mean_log_mass", "mean_model_calls", "mean_steps",
    "mean_tps",
)


def build_backend(joint: JointTable, epsilon: float, noise_mode: str,
                  seed: int) -> CallCounter:
    backend = OracleBackend(joint)
    if epsilon > 0.0:
        backend = perturb(backend, epsilon, seed=seed, mode=noise_mode)
    return CallCounter(backend)


def run_trajectory(
    spec: DecoderSpec,
    joint: JointTable,
    family: str,
    fixture_index: int,
    seed: int,
    block_size: int | None = None,
    epsilon: float = 0.0,
    noise_mode: str = "mixture",
    config_hash: str = "",
) -> RunRecord:
    """Decode one fixture with one decoder; returns the trace with metrics.

    The recorded model-call total is cross-checked against the call counter;
    a mismatch is a contract bug, not a recoverable condition.
    """
    length = joint.length
    schedule = (BlockSchedule(block_size) if block_size is not None
                else whole_sequence_schedule(length))
    backend = build_backend(joint, epsilon, noise_mode,
                            seed=seed ^ 0x9E3779B97F4A7C15)
    t0 = time.perf_counter()
    if spec.kind in ("random", "probability", "margin", "entropy"):
        rng = None
        if spec.kind == "random":
            rng = _rng(stream_entropy(seed, "traj", family, fixture_index, spec.label))
        scorer = HeuristicScorer(kind=ScorerKind(spec.kind), rng=rng)
        if spec.T is not None:
            state, record = fixed_step_decode(backend, length, schedule, scorer, spec.T)
        else:
            state, record = greedy_decode(backend, length, schedule, scorer, n=spec.n)
    elif spec.kind == "fdm":
        cfg = FdmConfig(K=spec.K, gamma=spec.gamma, n=spec.n,
                        block_global=spec.block_global)
        state, record = fdm_decode(backend, length, schedule, cfg)
    elif spec.kind == "fdm-a":
        cfg = FdmaConfig(gamma1=spec.gamma1, K1=spec.K1, eta1=spec.eta1,
                         eta2=spec.eta2, N=spec.N, block_global=spec.block_global)
        state, record = fdma_decode(backend, length, schedule, cfg)
    else:
        raise ValueError(f"unknown decoder kind {spec.kind!r}")
    wall = time.perf_counter() - t0

    if backend.count != record.declared_calls():
        raise AssertionError(
            f"call contract violated: counted {backend.count}, "
            f"declared {record.declared_calls()}"
        )

    record.decoder = spec.label
    record.params = spec.to_json()
    record.family = family
    record.fixture_index = fixture_index
    record.vocab_size = joint.vocab_size
    record.seed = seed
    record.recovery = tuple(state.tokens) == joint_argmax(joint)
    record.log_mass = safe_log(joint.prob(state.tokens))
    record.model_calls = backend.count
    record.wall_seconds = wall
    record.config_hash = config_hash
    return record


def record_to_json(record: RunRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": record.config_hash,
        "decoder": record.decoder,
        "params": record.params,
        "family": record.family,
        "fixture_index": record.fixture_index,
        "L": record.length,
        "m": record.vocab_size,
        "seed": record.seed,
        "steps": [t.to_json() for t in record.steps],
        "final_tokens": list(record.final_tokens),
        "recovery": record.recovery,
        "log_mass": record.log_mass,
        "model_calls": record.model_calls,
        "n_steps": record.n_steps,
        "wall_seconds": record.wall_seconds,
        "tokens_per_second": record.tokens_per_second,
    }


def dump_record_line(record: RunRecord) -> str:
    return json.dumps(record_to_json(record), sort_keys=True, separators=(",", ":"))


def strip_wall_fields(obj: dict) -> dict:
    return {k: v for k, v in obj.items() if k not in WALL_FIELDS}


@dataclass
class _Task:
    spec: DecoderSpec
    joint_json: dict
    family: str
    fixture_index: int
    seed: int
    block_size: int | None
    epsilon: float
    noise_mode: str
    config_hash: str


def _run_task(task: _Task) -> RunRecord:
    return run_trajectory(
        task.spec, JointTable.from_json(task.joint_json), task.family,
        task.fixture_index, task.seed, task.block_size, task.epsilon,
        task.noise_mode, task.config_hash,
    )


def run_grid(config: ExperimentConfig, out_dir) -> list[RunRecord]:
    """Execute the decoder x fixture grid; write runs.jsonl and summary.csv.

    Each trajectory owns an independent seeded stream keyed by its grid cell
    identity, so dropping a cell never shifts another cell's outputs.
    Workers only parallelize; the single writer sorts by cell identity so
    artifacts are byte-identical regardless of worker count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()

    from .fixtures import generate_fixtures

    tasks: list[_Task] = []
    for fspec in config.fixtures:
        tables = generate_fixtures(fspec.family, fspec.count, fspec.length,
                                   fspec.vocab_size, config.seed)
        for dspec in config.decoders:
            for i, joint in enumerate(tables):
                entropy = stream_entropy(config.seed, "cell", fspec.family, i, dspec.label)
                cell_seed = int(np.random.SeedSequence(entropy).generate_state(1)[0])
                tasks.append(_Task(
                    spec=dspec, joint_json=joint.to_json(), family=fspec.family,
                    fixture_index=i, seed=cell_seed, block_size=config.block_size,
                    epsilon=config.epsilon, noise_mode=config.noise_mode,
                    config_hash=chash,
                ))

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=8))
    else:
        records = [_run_task(t) for t in tasks]

    order = {(t.spec.label, t.family, t.fixture_index): i for i, t in enumerate(tasks)}
    records.sort(key=lambda r: order[(r.decoder, r.family, r.fixture_index)])

    with open(out / "runs.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dump_record_line(r) + "\n")
    write_summary(records, out / "summary.csv")
    return records


def aggregate(records) -> list[dict]:
    """Per-(decoder, family) means, recomputable exactly from the JSONL."""
    groups: dict[tuple, list] = {}
    for r in records:
        key = (r.decoder, r.family, r.length, r.vocab_size)
        groups.setdefault(key, []).append(r)
    rows = []
    for (decoder, family, L, m), grp in sorted(groups.items()):
        rows.append({
            "schema_version": SCHEMA_VERSION,
            "decoder": decoder,
            "family": family,
            "L": L,
            "m": m,
            "n_fixtures": len(grp),
            "mean_recovery": float(np.mean([1.0 if g.recovery else 0.0 for g in grp])),
            "mean_log_mass": float(np.mean([g.log_mass for g in grp])),
            "mean_model_calls": float(np.mean([g.model_calls for g in grp])),
            "mean_steps": float(np.mean([g.n_steps for g in grp])),
            "mean_tps": float(np.mean([g.tokens_per_second for g in grp])),
        })
    return rows


def write_summary(records, path) -> None:
    rows = aggregate(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


def read_jsonl(path) -> list[dict]:
    """Parse one JSONL artifact; malformed lines fail with their line number."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return out
