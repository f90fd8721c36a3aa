"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (bad flags, config or file), 2 runtime
failure. Diagnostics go to stderr; tables and JSON go to stdout or files.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import BACKEND, __version__
from .data import FileFormatError, InsufficientSamplesError
from .linalg import Density
from .parametrization import GlobalPrefactors, PznKind, layer_roles, network_hyperparams
from .sweep import (
    ConfigError,
    SweepConfig,
    aggregate,
    default_jobs,
    final_records,
    fit_metric,
    run_cell,
    run_sweep,
    summarize,
    write_csv,
    write_outputs,
)

CONFIG_KEYS = {
    "widths": "hidden widths d to sweep, strictly increasing (default [64,128,256,512,1024])",
    "seeds": "distinct seeds; each seeds init and data (default [0,1,2])",
    "pzn": "parametrization: mup | spectral | ntp | sp (default mup)",
    "rule": "update rule: sgd | spectral | frobenius | width_frobenius | sign (default sgd)",
    "steps": "full-batch training steps (default 2000)",
    "hidden_layers": "number of hidden layers of width d (default 2)",
    "activation": "relu | tanh | linear (default relu)",
    "sigma0": "global init prefactor (default sqrt(2))",
    "eta0": "global learning-rate prefactor (default 0.1)",
    "init_style": "gaussian | semi_orthogonal (default gaussian)",
    "layer": "layer used by the one-step and assumption-3 metrics (default 2)",
    "metrics": "metric ids to keep, e.g. [\"loss\", \"feature_change_ratio.l2\"]; null keeps all",
    "record_every": "if > 0, also record loss and feature change every N steps (default 0)",
    "spectral_tol": "power-iteration relative tolerance (default 1e-6)",
    "output": "output directory used when --out is not given",
    "data.kind": "synthetic | onehot | cifar (default synthetic)",
    "data.batch_size": "examples in the training batch (default 128)",
    "data.d0": "input dimension, or vocabulary size for onehot (default 256)",
    "data.out_dim": "output dimension (default 1)",
    "data.path": "CIFAR-10 binary batch file (cifar only)",
    "data.classes": "two CIFAR-10 class labels mapped to -1/+1 (default [0,1])",
}

ASSUMPTION_METRICS = ["loss", "assumption1_w", "assumption1_h", "assumption2", "assumption3", "assumption3_init"]


class CliError(Exception):
    """Invalid user input; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}")


def config_help() -> str:
    width = max(len(k) for k in CONFIG_KEYS)
    lines = ["config keys (JSON file via --config, or --set key=value; nested keys as data.<key>):"]
    lines += [f"  {k:<{width}}  {v}" for k, v in CONFIG_KEYS.items()]
    return "\n".join(lines)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, pairs) -> dict:
    """Apply ``key=value`` overrides; values are parsed as JSON when possible."""
    raw = json.loads(json.dumps(raw))
    for pair in pairs or ():
        if "=" not in pair:
            raise CliError(f"--set expects key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise CliError(f"unknown config key {key!r} in --set (see --help)")
        target = raw
        parts = key.split(".")
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = _parse_value(text)
    return raw


def load_config(args) -> SweepConfig:
    raw: dict = {}
    if args.config:
        raw = SweepConfig.from_json(args.config).to_dict()
    raw = apply_overrides(raw, args.set)
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    return SweepConfig.from_dict(raw)


def _out_dir(args, cfg: SweepConfig, fallback: str) -> Path:
    return Path(args.out or cfg.output or fallback)


def _jobs(args) -> int:
    if args.jobs is not None and args.jobs < 1:
        raise CliError("--jobs must be >= 1")
    return args.jobs or default_jobs()


def cmd_train(args) -> int:
    cfg = load_config(args)
    width = args.width if args.width is not None else cfg.widths[-1]
    if width < 1:
        raise CliError("--width must be >= 1")
    records = run_cell(cfg, width, cfg.seeds[0])
    final = records[-1]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(records, out / "records.csv", cfg.pzn.value)
        print(f"wrote {out / 'records.csv'}", file=sys.stderr)
    payload = {"width": width, "seed": final.seed, "step": final.step, "flags": final.flags,
               "values": {k: (v if math.isfinite(v) else None) for k, v in sorted(final.values.items())}}
    print(json.dumps(payload, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    records = run_sweep(cfg, _jobs(args))
    csv_path, json_path = write_outputs(records, cfg, _out_dir(args, cfg, "sweep-out"))
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    for m, entry in summarize(records, cfg)["metrics"].items():
        fit = entry["fit"]
        if fit is not None:
            print(f"{m:<32} slope {fit['slope']:+.3f}  r2 {fit['r_squared']:.3f}")
    return 0


def cmd_check_assumptions(args) -> int:
    cfg = load_config(args)
    cfg.metrics = list(ASSUMPTION_METRICS)
    records = run_sweep(cfg, _jobs(args))
    csv_path, json_path = write_outputs(records, cfg, _out_dir(args, cfg, "assumptions-out"))
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    finals = final_records(records)
    target = 1.0 / math.sqrt(cfg.data.batch_size)
    ids = sorted({k for r in finals for k in r.values if k.startswith("assumption")})
    print(f"{'metric':<20} {'slope':>7} " + " ".join(f"{'d=' + str(w):>9}" for w in cfg.widths))
    for m in ids:
        rows = aggregate(finals, m)
        try:
            slope = f"{fit_metric(finals, m).slope:+.3f}"
        except ValueError:
            slope = "n/a"
        print(f"{m:<20} {slope:>7} " + " ".join(f"{r.mean:9.4f}" for r in rows))
    print(f"assumption3 reference 1/sqrt(B) = {target:.4f}")
    return 0


def cmd_paths(args) -> int:
    from .paths import maximality_table, path_scaling_sweep, write_path_csv

    widths = _int_list(args.widths, "--widths")
    res = path_scaling_sweep(widths, args.kind, steps=args.steps, seed=args.seed or 0, d0=args.d0,
                             batch_size=args.batch_size, depth=args.depth,
                             pref=GlobalPrefactors(args.sigma0, args.eta0))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_path_csv(res, out / "paths.csv")
        print(f"wrote {out / 'paths.csv'}", file=sys.stderr)
    table = maximality_table(res)
    print(f"{'class':<6} {'slope':>7} {'leading':>8} {'maximal@' + str(widths[-1]):>12}")
    for c, fit in res.slopes.items():
        print(f"{c:<6} {fit.slope:+7.3f} {str(res.leading_order[c]):>8} {str(table[c]):>12}")
    print(f"max identity error {max(r.total_error for r in res.reports):.2e}")
    return 0


def _symbolic(value: float, base: str, sqrt: bool) -> str:
    """``value`` as ``base * p/q`` (or ``base * sqrt(p/q)``) when it is a small rational."""
    x = value * value if sqrt else value
    frac = Fraction(x).limit_denominator(10**9)
    if frac == 0 or abs(float(frac) - x) > 1e-12 * x:
        return f"{value:.6g}"
    p, q = frac.numerator, frac.denominator
    if sqrt:
        rp, rq = math.isqrt(p), math.isqrt(q)
        if rp * rp == p and rq * rq == q:
            p, q, sqrt = rp, rq, False
    if not sqrt:
        if q == 1:
            return base if p == 1 else f"{p}*{base}"
        return f"{base}/{q}" if p == 1 else f"{base}*{p}/{q}"
    return f"{base}*sqrt({p}/{q})"


def cmd_pzn_table(args) -> int:
    widths = _int_list(args.widths, "--widths")
    if len(widths) < 2:
        raise CliError("--widths needs at least an input and an output width")
    kinds = [PznKind(k) for k in _kind_list(args.kind)]
    pref = GlobalPrefactors(args.sigma0, args.eta0)
    roles = layer_roles(len(widths) - 1)
    print(f"sigma0 = {pref.sigma0:.6g}, eta0 = {pref.eta0:.6g}, input density = {args.density}")
    header = f"{'kind':<9}{'layer':>6}{'role':>8}{'fan_in':>8}{'fan_out':>8}  {'sigma':>12}  {'sigma rule':<24}{'eta':>12}  eta rule"
    print(header)
    for kind in kinds:
        for l, hp in enumerate(network_hyperparams(widths, kind, pref, input_density=args.density), start=1):
            print(f"{kind.value:<9}{l:>6}{roles[l - 1].value:>8}{widths[l - 1]:>8}{widths[l]:>8}  "
                  f"{hp.sigma:12.6g}  {_symbolic(hp.sigma / pref.sigma0, 'sigma0', True):<24}"
                  f"{hp.eta:12.6g}  {_symbolic(hp.eta / pref.eta0, 'eta0', False)}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    print(f"spectrallab {__version__}, kernels: {BACKEND}", file=sys.stderr)
    return 0 if run_selftest(sys.stdout) else 2


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _kind_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if names == ["all"]:
        return [k.value for k in PznKind]
    valid = {k.value for k in PznKind}
    bad = [n for n in names if n not in valid]
    if bad or not names:
        raise CliError(f"--kind expects a comma-separated subset of {sorted(valid)} or 'all', got {text!r}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrallab", description="Width-scaling experiments for wide MLPs.",
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def config_cmd(name, help_, fn, default_jobs_flag=True):
        p = sub.add_parser(name, help=help_, description=help_, epilog=config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", metavar="PATH", help="JSON config file (keys below)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, help="run a single seed (replaces config seeds)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        if default_jobs_flag:
            p.add_argument("--jobs", type=int, metavar="N", help="worker processes (default: logical cores)")
        p.set_defaults(fn=fn)
        return p

    p = config_cmd("train", "train one network and print its final metrics as JSON", cmd_train, False)
    p.add_argument("--width", type=int, help="hidden width (default: largest configured width)")
    config_cmd("sweep", "run a width sweep; writes records.csv and summary.json", cmd_sweep)
    config_cmd("check-assumptions", "sweep the assumption ratios and print their width scaling",
               cmd_check_assumptions)

    p = sub.add_parser("paths", help="path decomposition of trained linear nets",
                       description="Train one linear net per width and split its output by updated-layer subset.")
    p.add_argument("--widths", default="64,128,256,512", help="comma-separated hidden widths")
    p.add_argument("--kind", default="mup", choices=[k.value for k in PznKind])
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--d0", type=int, default=256, help="input dimension")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--sigma0", type=float, default=math.sqrt(2.0))
    p.add_argument("--eta0", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR", help="write paths.csv here")
    p.set_defaults(fn=cmd_paths)

    p = sub.add_parser("pzn-table", help="print per-layer sigma and eta",
                       description="Per-layer init scale and learning rate for given widths and kinds.")
    p.add_argument("--widths", required=True, help="comma-separated layer widths, input first")
    p.add_argument("--kind", default="all", help="comma-separated kinds or 'all'")
    p.add_argument("--sigma0", type=float, default=math.sqrt(2.0))
    p.add_argument("--eta0", type=float, default=0.1)
    p.add_argument("--density", default="dense", choices=[d.value for d in Density], help="input density")
    p.set_defaults(fn=cmd_pzn_table)

    p = sub.add_parser("selftest", help="run fast property checks")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (CliError, ConfigError, FileFormatError, InsufficientSamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        # bad values and unreadable input files are both the caller's to fix
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
