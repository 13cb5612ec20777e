"""Command-line driver.

Exit codes: 0 success, 1 config error, 2 diverged run, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import studies
from .config import ConfigError, load_config
from .experiments import compare, run_seed
from .plot import line_chart
from .score import SnrSimConfig, snr_simulate, trajectory_rows

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ORACLE = 0, 1, 2, 3


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite_or_none(obj):
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    text = json.dumps(_finite_or_none(obj), indent=2, sort_keys=True, default=_json_default,
                      allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def _int_list(text):
    try:
        out = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return out


def _float_list(text):
    try:
        out = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return out


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --- commands ----------------------------------------------------------------------


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg["seed"] if args.seed is None else args.seed
    report = run_seed(cfg, seed)
    out = _out_dir(args.out)
    write_json(out / "report.json", report.to_dict())
    write_csv(out / "ranks.csv", ["epoch", "layer", "rank"],
              [(a["epoch"], a["layer"], a["rank"]) for a in report.allocation])
    write_csv(out / "scores.csv", ["epoch", "entry", "value", "mean", "variance", "lag1_autocorr"],
              [(s["epoch"], e["entry"], e["value"], e["mean"], e["variance"], e["lag1_autocorr"])
               for s in report.score_stats for e in s["entries"]])
    if args.svg:
        layers = sorted({a["layer"] for a in report.allocation})
        series = {f"layer {l}": ([a["epoch"] for a in report.allocation if a["layer"] == l],
                                 [a["rank"] for a in report.allocation if a["layer"] == l])
                  for l in layers}
        (out / "ranks.svg").write_text(line_chart(series, "rank per layer", "epoch", "rank"))
    if report.status == "diverged":
        print(f"diverged: {report.diagnostic}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"test_loss={report.test_loss:.6g} final_ranks={report.final_ranks} out={out}")
    return EXIT_OK


def cmd_quad_sweep(args):
    path = studies.probe_path(args.net_seed)
    disc, slope = studies.discretization(path, args.n_list, args.n_ref)
    samp, ratios = studies.sampling(path, args.n, args.m_list, args.seeds, args.weighting,
                                    args.seed)
    cov = studies.coverage(path, args.n, args.m, args.seeds, args.delta, args.c, args.n_ref,
                           weighting=args.weighting, root_seed=args.seed)
    w = np.abs(path.weights)
    for row in samp:
        row["bound"] = float(np.sum(args.c * w * cov["b_hat"]
                                    * np.sqrt(np.log(1.0 / args.delta) / row["param"])))
    out = _out_dir(args.out)
    write_csv(out / "quad.csv", ["kind", "param", "error", "bound"],
              [(r["kind"], r["param"], r["error"], r["bound"]) for r in disc + samp])
    pairs = {str(m): v for m, v in ratios.items() if isinstance(m, int)}
    summary = {
        "net_seed": args.net_seed, "n": args.n, "n_ref": args.n_ref, "seeds": args.seeds,
        "weighting": args.weighting,
        "discretization_slope": slope if len(disc) > 1 else None,
        "sampling_std": {str(r["param"]): r["error"] for r in samp},
        "sampling_std_ratios": pairs,
        "sampling_std_ratios_entry_median": {k.split("_")[0]: v for k, v in ratios.items()
                                             if isinstance(k, str)},
        "coverage": cov,
    }
    write_json(out / "summary.json", summary)
    if args.svg:
        series = {"error": ([r["param"] for r in disc], [r["error"] for r in disc]),
                  "bound": ([r["param"] for r in disc], [r["bound"] for r in disc])}
        (out / "quad.svg").write_text(line_chart(series, "full-trapezoid error", "N", "error",
                                                 logx=True, logy=True))
    print(f"slope={summary['discretization_slope']} ratios={pairs} "
          f"coverage={cov['coverage']:.4f}")
    return EXIT_OK


def cmd_snr_sim(args):
    try:
        cfg = SnrSimConfig(mu=args.mu, sigma=args.sigma, betas=tuple(args.betas), steps=args.steps,
                           replications=args.reps, delta=args.delta, center=args.center)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    trajectories, summary = snr_simulate(cfg, args.seed)
    out = _out_dir(args.out)
    write_csv(out / "snr.csv", ["beta", "replication", "t", "snr", "deviation"],
              trajectory_rows(trajectories))
    write_json(out / "summary.json", summary)
    if args.svg:
        series = {f"beta={tr['beta']}": (list(range(1, cfg.steps + 1)),
                                          np.median(tr["deviation"], axis=1).tolist())
                  for tr in trajectories if tr["deviation"] is not None}
        (out / "snr.svg").write_text(line_chart(series, "median |SNR - mu/d|", "t", "deviation",
                                                logy=True))
    print(f"monotone={summary['monotone_non_increasing']} min_coverage={summary['min_coverage']} "
          f"degenerate={summary['degenerate']}")
    return EXIT_OK


def cmd_grad_check(args):
    fault = studies.break_first_entry if args.inject_fault else None
    res = studies.gradient_suite(args.seed, args.configs, args.h, fault=fault)
    print(f"configs={res.configs} checks={res.checks} max_rel_error={res.worst:.3e} tol={args.tol:g}")
    if not res.passed(args.tol):
        loc = res.where
        print(f"FAIL worst entry: config={loc['config']} kind={loc['kind']} layer={loc['layer']} "
              f"param={loc['param']} index={tuple(loc['index'])}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def cmd_compare(args):
    cfg = load_config(args.config)
    seeds = list(range(cfg["seed"], cfg["seed"] + args.seeds))
    rows, summary = compare(cfg, seeds, tuple(args.baselines))
    out = _out_dir(args.out)
    header = ["seed", "method", "status", "final_ranks", "total_rank", "trainable_parameters",
              "test_loss"]
    write_csv(out / "compare.csv", header, [[r[k] for k in header] for r in rows])
    write_json(out / "summary.json", summary)
    print(json.dumps(summary["median_test_loss"], sort_keys=True))
    return EXIT_DIVERGED if any(r["status"] == "diverged" for r in rows) else EXIT_OK


# --- parser --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are config errors (exit 1), keeping exit 2 for diverged runs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="pathlora",
                                     description="Adaptive-rank adapters scored by path integrals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one seeded run and write report.json")
    p.add_argument("config", nargs="?", help="key = value config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--svg", action="store_true", help="also write ranks.svg")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quad-sweep", help="quadrature error sweeps on the probe network")
    p.add_argument("--n-list", type=_int_list, default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--m-list", type=_int_list, default=[4, 16, 64])
    p.add_argument("--seeds", type=int, default=200, help="seeds per M and coverage trials")
    p.add_argument("--n", type=int, default=20, help="quadrature intervals for sampling")
    p.add_argument("--m", type=int, default=16, help="batches per epoch for coverage")
    p.add_argument("--n-ref", type=int, default=4096)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--weighting", choices=("verbatim", "unbiased"), default="verbatim")
    p.add_argument("--net-seed", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="node-sampling seed")
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_quad_sweep)

    p = sub.add_parser("snr-sim", help="Monte-Carlo SNR stability check")
    p.add_argument("--betas", type=_float_list, default=[0.5, 0.85, 0.97])
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--center", choices=("updated", "previous"), default="updated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_snr_sim)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite (tanh networks)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("compare", help="adaptive vs fixed-rank runs over seeds")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--baselines", nargs="+", choices=("fixed-lora",), default=["fixed-lora"])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        for name, low in (("seeds", 1), ("reps", 1), ("configs", 1), ("n", 2), ("m", 1),
                          ("n_ref", 2)):
            if getattr(args, name, low) < low:
                raise ConfigError(f"--{name.replace('_', '-')} must be >= {low}", name)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
