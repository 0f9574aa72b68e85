"""Command-line entry point.

Subcommands: generate, run, report, verify-theorem1, winners-curse,
consistency, order-influence. Analysis subcommands emit JSON reports; run
and report also write delimited artifacts and rendered figures under the
output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    consistency_curve,
    order_influence_curve,
    verify_theorem1,
    winners_curse,
)
from .fdm import FdmConfig
from .harness.config import DecoderSpec, ExperimentConfig, FixtureSpec, load_config
from .harness.fixtures import generate_fixtures, write_fixtures
from .harness.reporting import format_table, render_curve, report
from .harness.runner import read_jsonl, run_grid
from .models import OracleBackend, perturb


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=7, help="master 64-bit seed")
    parser.add_argument("--out-dir", type=Path, default=Path("out"),
                        help="directory for artifacts")


def _add_fixture_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--family", default="anticorrelated",
                        choices=("independent", "markov", "anticorrelated"))
    parser.add_argument("--count", type=int, default=50)
    parser.add_argument("--L", type=int, default=6, help="sequence length")
    parser.add_argument("--m", type=int, default=3, help="vocabulary size")


def _emit(obj, out_dir: Path, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    print(f"wrote {path}")


def _cmd_generate(args) -> int:
    tables = generate_fixtures(args.family, args.count, args.L, args.m, args.seed)
    paths = write_fixtures(tables, args.out_dir / "fixtures", args.family)
    print(f"wrote {len(paths)} fixtures to {args.out_dir / 'fixtures'}")
    return 0


def _decoder_from_args(args) -> DecoderSpec:
    return DecoderSpec(
        kind=args.decoder, K=args.K, gamma=args.gamma, n=args.n,
        K1=args.K1, gamma1=args.gamma1, eta1=args.eta1, eta2=args.eta2,
        N=args.N, T=args.T, block_global=(args.block_global == "true"),
    )


def _cmd_run(args) -> int:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = ExperimentConfig(
            seed=args.seed,
            fixtures=(FixtureSpec(args.family, args.count, args.L, args.m),),
            decoders=(_decoder_from_args(args),),
            block_size=args.block_size,
            epsilon=args.epsilon,
            noise_mode=args.noise_mode,
            workers=args.workers,
        )
    records = run_grid(config, args.out_dir)
    from .harness.runner import aggregate

    rows = aggregate(records)
    print(format_table(rows, ("decoder", "family", "n_fixtures", "mean_recovery",
                              "mean_log_mass", "mean_model_calls")))
    print(f"wrote {args.out_dir / 'runs.jsonl'} and {args.out_dir / 'summary.csv'}")
    return 0


def _cmd_report(args) -> int:
    records: list[dict] = []
    for path in args.runs:
        records.extend(read_jsonl(path))
    artifacts = report(records, args.out_dir)
    if records:
        from .harness.reporting import _group_rows

        rows = _group_rows(records)
        print(format_table(rows, ("decoder", "family", "n_records", "mean_recovery",
                                  "mean_log_mass", "mean_model_calls")))
    else:
        print("no records; wrote empty tables")
    print(json.dumps(artifacts, indent=2))
    return 0


def _cmd_verify_theorem1(args) -> int:
    rng_seeds = range(args.count)
    families = ("independent", "markov", "anticorrelated")
    reports = []
    worst = 0.0
    for i in rng_seeds:
        family = families[i % len(families)]
        table = generate_fixtures(family, 1, args.L, args.m, args.seed + i)[0]
        rep = verify_theorem1(table)
        worst = max(worst, abs(rep.residual))
        reports.append({"index": i, "family": family, **rep.to_json()})
    out = {
        "count": args.count, "L": args.L, "m": args.m, "seed": args.seed,
        "max_abs_residual": worst,
        "all_below_1e-9": bool(worst < 1e-9),
        "reports": reports,
    }
    _emit(out, args.out_dir, "theorem1_report.json")
    print(f"max |residual| over {args.count} joints: {worst:.3e}")
    return 0 if worst < 1e-9 else 1


def _cmd_winners_curse(args) -> int:
    rows = winners_curse(args.K, args.sigma, args.gaps, args.trials, args.seed)
    payload = [r.to_json() for r in rows]
    _emit({"sigma": args.sigma, "gaps": args.gaps, "trials": args.trials,
           "rows": payload}, args.out_dir, "winners_curse.json")
    print(format_table(payload, ("K", "flip_rate", "union_bound", "mean_max_noise",
                                 "evt_prediction", "evt_corrected", "mean_regret")))
    render_curve([r.K for r in rows], [r.flip_rate for r in rows],
                 "K", "flip rate", args.out_dir / "winners_curse_flip.png")
    render_curve([r.K for r in rows], [r.mean_regret for r in rows],
                 "K", "mean regret", args.out_dir / "winners_curse_regret.png")
    return 0


def _cmd_consistency(args) -> int:
    tables = generate_fixtures(args.family, args.count, args.L, args.m, args.seed)
    backends = [perturb(OracleBackend(t), args.epsilon, seed=args.seed)
                if args.epsilon > 0 else OracleBackend(t) for t in tables]
    cfg = FdmConfig(K=args.K, gamma=args.gamma, n=1)
    curve = consistency_curve(backends, args.L, None, cfg)
    payload = {"family": args.family, "count": args.count, "L": args.L,
               "m": args.m, "K": args.K, "gamma": args.gamma,
               "per_step_ratio": curve.tolist()}
    _emit(payload, args.out_dir, "consistency.json")
    render_curve(list(range(1, len(curve) + 1)), curve.tolist(),
                 "step", "agreement ratio", args.out_dir / "consistency.png")
    print("per-step agreement:", np.array2string(curve, precision=3))
    return 0


def _cmd_order_influence(args) -> int:
    tables = generate_fixtures(args.family, args.count, args.L, args.m, args.seed)
    probes = args.t_probe if args.t_probe else list(range(args.L - 1))
    curve = order_influence_curve(tables, args.L, None, probes)
    payload = {"family": args.family, "count": args.count, "L": args.L,
               "m": args.m, "mean_distance_by_step": curve}
    _emit(payload, args.out_dir, "order_influence.json")
    xs = sorted(curve)
    render_curve(xs, [curve[x] for x in xs], "branch step",
                 "mean downstream divergence", args.out_dir / "order_influence.png")
    print("mean downstream divergence:", curve)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foredecode",
        description="Decoding-order engine and benchmark harness for masked "
                    "sequence denoisers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write seeded fixture tables as JSON")
    _add_common(p)
    _add_fixture_args(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("run", help="execute a decoder x fixture grid")
    _add_common(p)
    _add_fixture_args(p)
    p.add_argument("--config", type=Path, default=None,
                   help="JSON experiment config; overrides the flag surface")
    p.add_argument("--decoder", default="fdm",
                   choices=("random", "probability", "margin", "entropy", "fdm", "fdm-a"))
    p.add_argument("--K", type=int, default=2, help="search width")
    p.add_argument("--gamma", type=float, default=0.6, help="pruning threshold")
    p.add_argument("--n", type=int, default=1, help="tokens per step")
    p.add_argument("--K1", type=int, default=2, help="accelerated variant width")
    p.add_argument("--gamma1", type=float, default=0.5, help="exploration pruning")
    p.add_argument("--eta1", type=float, default=0.8, help="qualified threshold")
    p.add_argument("--eta2", type=float, default=0.7, help="borderline threshold")
    p.add_argument("--N", type=int, default=8, help="decode-count clip")
    p.add_argument("--T", type=int, default=None, help="fixed step budget (heuristics)")
    p.add_argument("--block-size", type=int, default=None)
    p.add_argument("--block-global", choices=("true", "false"), default="false",
                   help="restrict the global score to the active block")
    p.add_argument("--epsilon", type=float, default=0.0, help="oracle perturbation")
    p.add_argument("--noise-mode", default="mixture", choices=("mixture", "gumbel"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="aggregate JSONL runs into tables, sweep CSVs, figures")
    _add_common(p)
    p.add_argument("--runs", type=Path, nargs="+", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("verify-theorem1", help="KL-identity check on random joints")
    _add_common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--m", type=int, default=3)
    p.set_defaults(func=_cmd_verify_theorem1)

    p = sub.add_parser("winners-curse", help="noisy-selection Monte Carlo")
    _add_common(p)
    p.add_argument("--K", type=int, nargs="+", default=[4, 16, 64, 256])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--gaps", type=float, nargs="+", default=[0.5])
    p.add_argument("--trials", type=int, default=100_000)
    p.set_defaults(func=_cmd_winners_curse)

    p = sub.add_parser("consistency", help="local vs combined agreement per step")
    _add_common(p)
    _add_fixture_args(p)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.set_defaults(func=_cmd_consistency)

    p = sub.add_parser("order-influence", help="downstream divergence of step-t choices")
    _add_common(p)
    _add_fixture_args(p)
    p.add_argument("--t-probe", type=int, nargs="*", default=None)
    p.set_defaults(func=_cmd_order_influence)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
