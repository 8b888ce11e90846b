"""Command-line interface.

Subcommands::

    kernel-info   evaluation table, L2 norm and kernel distances
    dump-rule     nodes and weights of a sum-of-exponentials kernel (CSV)
    sample        Volterra (and model) paths with summary statistics
    weak-error    coupled Monte Carlo weak error for one kernel pair (JSON)
    rate-study    weak errors and bound components over a kernel_bar sweep

Precedence: command-line flags override the config file, which overrides
built-in defaults.  Exit codes: 0 success, 1 numerical failure, 2 bad
configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    grid_from_config,
    kernel_from_block,
    model_from_config,
    sweep_values,
    with_parameter,
)
from .kernels import Family, bound_quantity, domination_constant, l1_diff, l1_sqdiff
from .models import euler_evolve, validate_hypotheses
from .sampler import factorize_joint, sample_exact, sample_markovian
from .weakerror import RateFitError, coupled_weak_error, get_test_function, rate_study

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
DEFAULT_BATCHES = 16
KERNEL_TABLE_POINTS = 8


class UsageError(Exception):
    pass


def _num(x):
    """Round-trip text for a float; ``nan`` and ``inf`` spelled as such."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _dumps(obj):
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


class Output:
    """Writes named files under ``--out`` (or prints to stdout without one)."""

    def __init__(self, directory, force):
        self.directory = directory
        self.force = force

    def emit(self, name, text, stdout=False):
        if self.directory is None or stdout:
            sys.stdout.write(text)
            if self.directory is None:
                return
        path = os.path.join(self.directory, name)
        if os.path.exists(path) and not self.force:
            raise UsageError(f"{path} exists; pass --force to overwrite")
        os.makedirs(self.directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load(args):
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.set("mc", "seed", str(args.seed))
    return cfg


def _kernels(cfg, grid, need_bar=False):
    dt = float(grid.dt[0])
    K = kernel_from_block(cfg.block("kernel"), "kernel", grid.T, dt)
    Kbar = None
    if cfg.has("kernel_bar"):
        Kbar = kernel_from_block(cfg.block("kernel_bar"), "kernel_bar", grid.T, dt)
    elif need_bar:
        raise ConfigError("missing section [kernel_bar]")
    return K, Kbar


def _mc_settings(cfg, args):
    N = cfg.get("mc", "N", 10000, int)
    seed = cfg.get("mc", "seed", 0, int)
    batches = cfg.get("mc", "batches", DEFAULT_BATCHES, int)
    if N < 2 or batches < 1 or seed < 0 or seed >= 2**64:
        raise ConfigError("[mc] needs N >= 2, batches >= 1 and 0 <= seed < 2**64")
    return N, seed, -(-N // batches)


def _out_dir(cfg, args):
    if args.out is not None:
        return args.out
    return cfg.get("output", "dir", "", str) or None


def cmd_kernel_info(cfg, args, out):
    grid = grid_from_config(cfg)
    K, Kbar = _kernels(cfg, grid)
    T = grid.T
    t = T * np.arange(1, KERNEL_TABLE_POINTS + 1) / KERNEL_TABLE_POINTS
    header = ["t", "K"] + (["Kbar"] if Kbar is not None else [])
    rows = []
    for ti in t:
        row = [_num(ti), _num(K(ti))]
        if Kbar is not None:
            row.append(_num(Kbar(ti)))
        rows.append(row)
    lines = [_csv_text(header, rows), f"l2_norm_sq = {_num(K.l2_norm_sq(T))}\n"]
    if Kbar is not None:
        profile = bound_quantity(K, Kbar, T)
        lines.append(f"l2_norm_sq_bar = {_num(Kbar.l2_norm_sq(T))}\n")
        lines.append(f"l1_diff = {_num(l1_diff(K, Kbar, T))}\n")
        lines.append(f"l1_sqdiff = {_num(l1_sqdiff(K, Kbar, T))}\n")
        lines.append(f"bound_l1 = {_num(profile.bound_l1)}\n")
        lines.append(f"bound_l1sq = {_num(profile.bound_l1sq)}\n")
        lines.append(f"bound_quantity = {_num(profile.bound_quantity)}\n")
        lines.append(f"domination_constant = {_num(domination_constant(K, Kbar, T))}\n")
    report = validate_hypotheses(model_from_config(cfg), K, Kbar, T)
    for v in report.violations:
        lines.append(f"violation: {v}\n")
    for w in report.warnings:
        lines.append(f"warning: {w}\n")
    out.emit("kernel_info.txt", "".join(lines), stdout=True)
    return EXIT_OK


def cmd_dump_rule(cfg, args, out):
    grid = grid_from_config(cfg)
    section = "kernel_bar" if cfg.has("kernel_bar") else "kernel"
    kernel = kernel_from_block(cfg.block(section), section, grid.T, float(grid.dt[0]))
    if kernel.family is not Family.SUM_OF_EXPONENTIALS:
        raise ConfigError(f"[{section}] is not a sum-of-exponentials kernel")
    w = kernel.scale * np.asarray(kernel.weights)
    rows = [[_num(x), _num(wi)] for x, wi in zip(kernel.nodes, w)]
    out.emit("rule.csv", _csv_text(["x", "w"], rows))
    return EXIT_OK


def _sampler(cfg, K, grid, rho):
    kind = cfg.get("mc", "sampler", "exact")
    if kind == "markovian":
        if K.family is not Family.SUM_OF_EXPONENTIALS:
            raise ConfigError("[mc] sampler = markovian needs a sum-of-exponentials kernel")
        return lambda seed, count, first: sample_markovian(K, grid, rho, seed, count, first)
    if kind != "exact":
        raise ConfigError(f"[mc] unknown sampler {kind!r}")
    fact = factorize_joint(K, grid)
    return lambda seed, count, first: sample_exact(fact, rho, seed, count, first)


def cmd_sample(cfg, args, out):
    grid = grid_from_config(cfg)
    K, _ = _kernels(cfg, grid)
    model = model_from_config(cfg)
    rho = model.rho if model is not None else 0.0
    N, seed, batch = _mc_settings(cfg, args)
    _check_hypotheses(model, K, None, grid.T, args.force)
    draw = _sampler(cfg, K, grid, rho)
    keep = min(args.dump_paths, N)
    VT, XT, rejected = [], [], 0
    for first in range(0, N, batch):
        count = min(batch, N - first)
        bundle = draw(seed, count, first)
        VT.append(bundle.V[:, -1])
        X = None
        if model is not None:
            res = euler_evolve(model, bundle, return_path=first < keep)
            XT.append(res.terminal)
            rejected += res.rejection_count
            X = res.path
        for r in range(first, min(first + count, keep)):
            k = r - first
            header = ["t", "dW", "dWhat", "V"] + (["X"] if X is not None else [])
            rows = []
            for j, tj in enumerate(grid.t):
                dw = bundle.dW[k, j - 1] if j else 0.0
                dwh = bundle.dWhat[k, j - 1] if j else 0.0
                row = [_num(tj), _num(dw), _num(dwh), _num(bundle.V[k, j])]
                if X is not None:
                    row.append(_num(X[k, j]))
                rows.append(row)
            out.emit(f"path_{r:06d}.csv", _csv_text(header, rows))
    VT = np.concatenate(VT)
    target = float(K.l2_norm_sq(grid.T))
    var = float(np.var(VT, ddof=1))
    summary = {
        "n": N,
        "seed": seed,
        "mean_VT": float(np.mean(VT)),
        "var_VT": var,
        "l2_norm_sq": target,
        "var_rel_gap": abs(var - target) / target if target > 0 else None,
    }
    if model is not None:
        XT = np.concatenate(XT)
        good = XT[np.isfinite(XT)]
        summary["mean_XT"] = float(np.mean(good)) if good.size else None
        summary["var_XT"] = float(np.var(good, ddof=1)) if good.size > 1 else None
        summary["rejections"] = rejected
    out.emit("summary.json", _dumps(summary), stdout=True)
    return EXIT_OK


def _check_hypotheses(model, K, Kbar, T, force):
    report = validate_hypotheses(model, K, Kbar, T)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.passed:
        reasons = "; ".join(report.violations)
        if not force:
            raise UsageError(f"hypotheses violated ({reasons}); pass --force to run anyway")
        print(f"warning: running despite violations: {reasons}", file=sys.stderr)


def _require_model(cfg):
    model = model_from_config(cfg)
    if model is None:
        raise ConfigError("[model] with a variant is required")
    return model


def _phi(cfg):
    try:
        return get_test_function(cfg.get("model", "phi", "square"))
    except ValueError as exc:
        raise ConfigError(f"[model] phi: {exc}") from None


def cmd_weak_error(cfg, args, out):
    grid = grid_from_config(cfg)
    K, Kbar = _kernels(cfg, grid, need_bar=True)
    model = _require_model(cfg)
    phi = _phi(cfg)
    N, seed, batch = _mc_settings(cfg, args)
    _check_hypotheses(model, K, Kbar, grid.T, args.force)
    report = coupled_weak_error(
        model, K, Kbar, grid, phi, N, seed, batch, args.threads, config_echo=cfg.blocks
    )
    out.emit("weak_error.json", report.to_json() + "\n", stdout=True)
    return EXIT_OK


def _fit_entry(points):
    try:
        fit = rate_study(points)
    except RateFitError as exc:
        return {"slope": None, "status": f"undefined: {exc}"}
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "excluded": fit.excluded,
        "status": "ok",
    }


def cmd_rate_study(cfg, args, out):
    grid = grid_from_config(cfg)
    parameter, values = sweep_values(cfg)
    K, _ = _kernels(cfg, grid)
    bar_block = cfg.block("kernel_bar")
    analytic = args.analytic
    if not analytic:
        model = _require_model(cfg)
        phi = _phi(cfg)
        N, seed, batch = _mc_settings(cfg, args)
        _check_hypotheses(model, K, None, grid.T, args.force)
    T = grid.T
    rows, failed = [], False
    series = {k: [] for k in ("estimate", "l1_diff", "l1_sqdiff", "bound_l1", "bound_l1sq")}
    for value in values:
        record = dict.fromkeys(
            ("estimate", "ci", "bound_quantity", "bound_l1", "bound_l1sq", "l1_diff", "l1_sqdiff"),
            float("nan"),
        )
        status = "ok"
        try:
            block = with_parameter(bar_block, parameter, value)
            Kbar = kernel_from_block(block, "kernel_bar", T, float(grid.dt[0]))
            profile = bound_quantity(K, Kbar, T)
            record.update(
                bound_quantity=profile.bound_quantity,
                bound_l1=profile.bound_l1,
                bound_l1sq=profile.bound_l1sq,
                l1_diff=l1_diff(K, Kbar, T),
                l1_sqdiff=l1_sqdiff(K, Kbar, T),
            )
            if not analytic:
                rep = coupled_weak_error(model, K, Kbar, grid, phi, N, seed, batch, args.threads)
                record.update(estimate=rep.estimate, ci=rep.ci_half_width)
        except (ArithmeticError, ValueError) as exc:
            # a bad sweep point (including an invalid kernel value) fails alone
            status = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
            failed = True
        if status == "ok":
            for key in ("l1_diff", "l1_sqdiff", "bound_l1", "bound_l1sq"):
                series[key].append((value, record[key]))
            if not analytic:
                series["estimate"].append((value, record["estimate"], record["ci"]))
        rows.append([_num(value)] + [_num(record[k]) for k in (
            "estimate", "ci", "bound_quantity", "bound_l1", "bound_l1sq", "l1_diff", "l1_sqdiff"
        )] + [status])
    header = ["param", "estimate", "ci", "bound_quantity", "bound_l1", "bound_l1sq",
              "l1_diff", "l1_sqdiff", "status"]
    out.emit("rate_study.csv", _csv_text(header, rows))
    fits = {key: _fit_entry(pts) for key, pts in series.items() if not (analytic and key == "estimate")}
    payload = {"parameter": parameter, "mode": "analytic" if analytic else "monte_carlo", "fits": fits}
    out.emit("rate_fit.json", _dumps(payload), stdout=out.directory is not None)
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "kernel-info": cmd_kernel_info,
    "dump-rule": cmd_dump_rule,
    "sample": cmd_sample,
    "weak-error": cmd_weak_error,
    "rate-study": cmd_rate_study,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="volterra-weak",
        description="Kernel approximation weak errors for integrated Volterra processes.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="run configuration file")
    parser.add_argument("--seed", type=int, help="overrides [mc] seed")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on it)")
    parser.add_argument("--analytic", action="store_true",
                        help="rate-study: kernel distances only, no Monte Carlo")
    parser.add_argument("--dump-paths", type=int, default=0, metavar="K",
                        help="sample: write the first K replications as CSV")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs; run despite hypothesis violations")
    parser.add_argument("--out", metavar="DIR", help="output directory (default: stdout)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.threads < 1 or args.dump_paths < 0:
        print("error: --threads must be >= 1 and --dump-paths >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
        out = Output(_out_dir(cfg, args), args.force)
        if args.dump_paths and out.directory is None:
            raise UsageError("--dump-paths needs --out or [output] dir")
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UsageError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
