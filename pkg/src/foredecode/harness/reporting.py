"""Aggregation of JSONL run artifacts into summary tables, per-sweep CSVs,
and rendered figures (PNG alongside each sweep CSV)."""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .config import SCHEMA_VERSION  # noqa: E402

SWEEP_PARAMS = ("K", "gamma", "eta1", "eta2", "K1", "N", "T")

SUMMARY_COLUMNS = (
    "schema_version", "decoder", "family", "n_records",
    "mean_recovery", "mean_log_mass", "mean_model_calls", "mean_steps",
    "mean_tps",
)


def _group_rows(records: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["decoder"], r["family"]), []).append(r)
    rows = []
    for (decoder, family), grp in sorted(groups.items()):
        rows.append({
            "schema_version": SCHEMA_VERSION,
            "decoder": decoder,
            "family": family,
            "n_records": len(grp),
            "mean_recovery": float(np.mean([1.0 if g["recovery"] else 0.0 for g in grp])),
            "mean_log_mass": float(np.mean([g["log_mass"] for g in grp])),
            "mean_model_calls": float(np.mean([g["model_calls"] for g in grp])),
            "mean_steps": float(np.mean([g["n_steps"] for g in grp])),
            "mean_tps": float(np.mean([g["tokens_per_second"] for g in grp])),
        })
    return rows


def _sweep_rows(records: list[dict], param: str) -> list[dict]:
    """Aggregate by a single decoder parameter, when it varies."""
    kinds = {r["params"]["kind"] for r in records}
    rows = []
    for kind in sorted(kinds):
        sub = [r for r in records if r["params"]["kind"] == kind]
        values = sorted({r["params"].get(param) for r in sub} - {None})
        if len(values) < 2:
            continue
        for v in values:
            grp = [r for r in sub if r["params"].get(param) == v]
            rows.append({
                "schema_version": SCHEMA_VERSION,
                "kind": kind,
                param: v,
                "n_records": len(grp),
                "mean_recovery": float(np.mean([1.0 if g["recovery"] else 0.0 for g in grp])),
                "mean_log_mass": float(np.mean([g["log_mass"] for g in grp])),
                "mean_model_calls": float(np.mean([g["model_calls"] for g in grp])),
            })
    return rows


def _write_csv(rows: list[dict], path: Path, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _render_sweep(rows: list[dict], param: str, path: Path) -> None:
    fig, (ax_acc, ax_calls) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    for kind in sorted({r["kind"] for r in rows}):
        sub = sorted((r for r in rows if r["kind"] == kind), key=lambda r: r[param])
        xs = [r[param] for r in sub]
        ax_acc.plot(xs, [r["mean_recovery"] for r in sub], marker="o", label=kind)
        ax_calls.plot(xs, [r["mean_model_calls"] for r in sub], marker="s", label=kind)
    ax_acc.set_xlabel(param)
    ax_acc.set_ylabel("mean recovery")
    ax_calls.set_xlabel(param)
    ax_calls.set_ylabel("mean model calls")
    ax_acc.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_curve(xs, ys, xlabel: str, ylabel: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def report(records: list[dict], out_dir) -> dict:
    """Summarize run records: a per-(decoder, family) table plus one CSV and
    PNG per decoder parameter that actually varies. Empty input produces
    empty tables and a warning, not an error."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {"summary": str(out / "report_summary.csv"), "sweeps": {}}

    rows = _group_rows(records)
    _write_csv(rows, out / "report_summary.csv", SUMMARY_COLUMNS)
    if not records:
        warnings.warn("no run records supplied; wrote empty tables")
        return artifacts

    for param in SWEEP_PARAMS:
        srows = _sweep_rows(records, param)
        if not srows:
            continue
        csv_path = out / f"sweep_{param}.csv"
        png_path = out / f"sweep_{param}.png"
        columns = ("schema_version", "kind", param, "n_records",
                   "mean_recovery", "mean_log_mass", "mean_model_calls")
        _write_csv(srows, csv_path, columns)
        _render_sweep(srows, param, png_path)
        artifacts["sweeps"][param] = {"csv": str(csv_path), "png": str(png_path)}
    return artifacts


def format_table(rows: list[dict], columns) -> str:
    """Fixed-width text table for terminal output."""
    cols = list(columns)
    cells = [[str(r.get(c, "")) if not isinstance(r.get(c), float)
              else f"{r[c]:.4f}" for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(cols)]
    header = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    lines = [header, "-" * len(header)]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)
