"""Command-line entry point: ``regtyler <command> [options]``.

Every option can also come from a JSON file given with ``--config``; flags
win over the file, the file wins over built-in defaults, and unknown keys are
rejected. Output files start with ``#`` comment lines holding the package
version, a timestamp and the fully resolved configuration, so rerunning with
that configuration reproduces the file byte for byte apart from the timestamp.

Exit status: 0 on success, 1 on a domain error (message on stderr), 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import Scenario, run_convergence_diagnostic, run_nmse_sweep, write_plot_data
from .errors import RegTylerError
from .estimators import Penalty, ShrinkageConfig, SolverOptions, Status, estimate
from .existence import existence_verdict
from .portfolio import BacktestConfig, fixture_path, load_prices, rolling_backtest
from .sampling import EllipticalSpec, SampleSet, ar1_scatter
from .structured import StructureSpec, constrained_estimate
from .tuning import RhoGrid, oracle_grid_search, validation_select

COMMON = {"tol": 1e-10, "max_iter": 2000, "seed": 0, "threads": 1, "out": None}

DEFAULTS = {
    "estimate": {"samples": None, "penalty": "wiesel", "alpha0": 0.0, "target": None, "structure": "none",
                 "normalize_trace": None},
    "check-existence": {"samples": None, "penalty": "wiesel", "alpha0": 0.0, "target": None,
                        "cap": 10**6},
    "bench-nmse": {"K": 10, "N": [20, 60], "estimators": ["sample_cov", "tyler", "wiesel", "kl"],
                   "distribution": "student_t", "dof": 3.0, "beta": 0.8, "target": "identity",
                   "trials": 100, "grid_step": 0.01, "tol": 1e-8, "out": "."},
    "bench-convergence": {"K": 10, "N": 8, "alpha0": [0.24, 0.26], "penalty": "wiesel", "max_iter": 5000,
                          "out": "."},
    "backtest": {"prices": None, "n_train": [70, 80, 90, 100], "n_val": 10, "n_test": 10,
                 "estimators": ["sample_cov", "tyler", "wiesel", "kl"], "grid_step": 0.01, "tol": 1e-8,
                 "out": "."},
    "tune": {"samples": None, "kind": "wiesel", "truth": None, "target": None, "validation_rows": None,
             "grid_step": 0.01, "tol": 1e-8, "out": "."},
}


class UsageError(Exception):
    """Bad flags or configuration (exit status 2)."""


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _add_common(p):
    p.add_argument("--config", help="JSON file with option values (flags override it)")
    p.add_argument("--tol", type=float, help="relative step tolerance")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="iteration cap")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--threads", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="regtyler", description="Regularized Tyler scatter estimation")
    parser.add_argument("--version", action="version", version=f"regtyler {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit Tyler / Wiesel / KL to a sample CSV")
    p.add_argument("--samples", help="CSV, one sample per row, no header")
    p.add_argument("--penalty", choices=["none", "wiesel", "kl"])
    p.add_argument("--alpha0", type=float)
    p.add_argument("--target", help="CSV with the K x K target (default identity)")
    p.add_argument("--structure", choices=["none", "toeplitz"])
    p.add_argument("--normalize-trace", dest="normalize_trace", action="store_const", const=True,
                   help="trace-normalize KL iterates (diagonal-loading variant)")
    _add_common(p)

    p = sub.add_parser("check-existence", help="exact existence check for a sample CSV")
    p.add_argument("--samples")
    p.add_argument("--penalty", choices=["wiesel", "kl"])
    p.add_argument("--alpha0", type=float)
    p.add_argument("--target")
    p.add_argument("--cap", type=int, help="subset enumeration budget")
    _add_common(p)

    p = sub.add_parser("bench-nmse", help="Monte-Carlo NMSE sweep")
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=_int_list, help="comma-separated sample sizes")
    p.add_argument("--estimators", type=_str_list)
    p.add_argument("--distribution", choices=["gaussian", "student_t"])
    p.add_argument("--dof", type=float)
    p.add_argument("--beta", type=float, help="AR(1) coefficient of the true scatter")
    p.add_argument("--target", choices=["identity", "truth"])
    p.add_argument("--trials", type=int)
    p.add_argument("--grid-step", type=float, dest="grid_step")
    _add_common(p)

    p = sub.add_parser("bench-convergence", help="per-iteration step and conditioning series")
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--alpha0", type=_float_list, help="comma-separated alpha0 values")
    p.add_argument("--penalty", choices=["wiesel", "kl"])
    _add_common(p)

    p = sub.add_parser("backtest", help="rolling minimum-variance backtest")
    p.add_argument("--prices", help="price CSV (default: bundled synthetic fixture)")
    p.add_argument("--n-train", type=_int_list, dest="n_train")
    p.add_argument("--n-val", type=int, dest="n_val")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--estimators", type=_str_list)
    p.add_argument("--grid-step", type=float, dest="grid_step")
    _add_common(p)

    p = sub.add_parser("tune", help="select rho by oracle NMSE or validation variance")
    p.add_argument("--samples")
    p.add_argument("--kind", choices=["wiesel", "kl", "chen"])
    p.add_argument("--truth", help="CSV with the true scatter (oracle mode)")
    p.add_argument("--target")
    p.add_argument("--validation-rows", type=int, dest="validation_rows",
                   help="use the last n rows as validation window (validation mode)")
    p.add_argument("--grid-step", type=float, dest="grid_step")
    _add_common(p)
    return parser


def resolve_config(args):
    """Merge built-in defaults, the JSON config file and explicit flags."""
    cmd = args.command
    resolved = {**COMMON, **DEFAULTS[cmd]}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(resolved))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {unknown}")
        resolved.update(loaded)
    for key in resolved:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    return resolved


def header_lines(cmd, cfg):
    return [
        f"regtyler {__version__}",
        f"generated: {_dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()}",
        f"command: {cmd}",
        "config: " + json.dumps(cfg, sort_keys=True),
    ]


def _write(out_dir, name, text):
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _read_matrix(path):
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise RegTylerError(f"cannot parse numeric CSV {path}: {exc}") from exc
    return A


def _need(cfg, key):
    if cfg.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _options(cfg, **extra):
    return SolverOptions(tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]), **extra)


def _grid(cfg):
    return RhoGrid.uniform(float(cfg["grid_step"]))


def _matrix_csv(A, header):
    lines = [f"# {h}" for h in header]
    lines += [",".join(repr(float(v)) for v in row) for row in np.asarray(A)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_estimate(cfg, out):
    X = SampleSet.from_array(_read_matrix(_need(cfg, "samples")))
    T = _read_matrix(cfg["target"]) if cfg["target"] else None
    config = ShrinkageConfig(Penalty(cfg["penalty"]), float(cfg["alpha0"]), T, cfg["normalize_trace"])
    opts = _options(cfg)
    if cfg["structure"] == "toeplitz":
        res = constrained_estimate(X, config, StructureSpec.toeplitz(), opts)
    else:
        res = estimate(X, config, opts)
    tr = res.trace
    out.write(f"status={tr.status.value}\niterations={tr.iterations}\n")
    out.write(f"inv_condition={tr.inv_condition[-1]:.6e}\nmessage={tr.message}\n")
    if X.dropped_zero_rows:
        out.write(f"dropped_zero_rows={X.dropped_zero_rows}\n")
    if tr.status is Status.DIVERGED or tr.status is Status.INNER_SOLVE_FAILED:
        raise RegTylerError(f"estimate failed: {tr.message}")
    if tr.status is Status.MAX_ITERATIONS:
        sys.stderr.write(f"warning: {tr.message}\n")
    if cfg["out"]:
        head = header_lines("estimate", cfg)
        _write(cfg["out"], "estimate.csv", _matrix_csv(res.sigma.entries, head))
        rows = ["# " + h for h in head] + ["iteration,loss,step,inv_condition,residual"]
        for t in range(len(tr.loss)):
            rows.append(f"{t},{tr.loss[t]!r},{tr.step[t]!r},{tr.inv_condition[t]!r},{tr.residual[t]!r}")
        _write(cfg["out"], "trace.csv", "\n".join(rows) + "\n")
    else:
        for row in res.sigma.entries:
            out.write(",".join(f"{v:.12g}" for v in row) + "\n")
    return 0


def cmd_check_existence(cfg, out):
    X = SampleSet.from_array(_read_matrix(_need(cfg, "samples")))
    T = _read_matrix(cfg["target"]) if cfg["target"] else None
    config = ShrinkageConfig(Penalty(cfg["penalty"]), float(cfg["alpha0"]), T)
    report = existence_verdict(X, config, cap=int(cfg["cap"]), on_capacity="report")
    text = "\n".join(report.summary_lines()) + "\n"
    out.write(text)
    if cfg["out"]:
        _write(cfg["out"], "existence.txt", "".join(f"# {h}\n" for h in header_lines("check-existence", cfg)) + text)
    if report.sufficient_ok is None:
        raise RegTylerError("subset budget exceeded; only simplified_ok is available")
    return 0


def cmd_bench_nmse(cfg, out):
    k = int(cfg["K"])
    truth = ar1_scatter(k, float(cfg["beta"]))
    dist = EllipticalSpec(cfg["distribution"], truth, float(cfg["dof"]) if cfg["distribution"] == "student_t" else None)
    target = None if cfg["target"] == "identity" else truth
    scenario = Scenario(dist, tuple(cfg["N"]), tuple(cfg["estimators"]), target, int(cfg["trials"]),
                        int(cfg["seed"]), _grid(cfg), _options(cfg))
    table = run_nmse_sweep(scenario, workers=int(cfg["threads"]))
    path = _write(cfg["out"], "nmse.csv", table.to_csv(header_lines("bench-nmse", cfg)))
    out.write(f"wrote {path}\n")
    return 0


def cmd_bench_convergence(cfg, out):
    series = run_convergence_diagnostic(int(cfg["K"]), int(cfg["N"]), cfg["alpha0"], cfg["penalty"],
                                        int(cfg["seed"]), int(cfg["max_iter"]))
    head = header_lines("bench-convergence", cfg)
    for s in series:
        path = _write(cfg["out"], f"convergence_{s.label}.csv", write_plot_data([s], head))
        out.write(f"{s.label}: status={s.status.value} iterations={s.trace.iterations} "
                  f"final_inv_condition={s.trace.inv_condition[-1]:.3e} -> {path}\n")
    return 0


def cmd_backtest(cfg, out):
    panel = load_prices(cfg["prices"] or fixture_path())
    head = header_lines("backtest", cfg)
    chunks = []
    for n_train in cfg["n_train"]:
        bc = BacktestConfig(int(n_train), int(cfg["n_val"]), int(cfg["n_test"]), tuple(cfg["estimators"]),
                            _grid(cfg), None, _options(cfg))
        res = rolling_backtest(panel, bc, workers=int(cfg["threads"]))
        chunks.append(res.to_csv().splitlines()[1:] if chunks else res.to_csv().splitlines())
    text = "".join(f"# {h}\n" for h in head) + "\n".join(line for c in chunks for line in c) + "\n"
    path = _write(cfg["out"], "backtest.csv", text)
    out.write(f"panel: {panel.length} return rows, {panel.dim} assets, {panel.discarded} discarded\nwrote {path}\n")
    return 0


def cmd_tune(cfg, out):
    R = _read_matrix(_need(cfg, "samples"))
    T = _read_matrix(cfg["target"]) if cfg["target"] else None
    grid, opts = _grid(cfg), _options(cfg)
    if cfg["truth"]:
        res = oracle_grid_search(cfg["kind"], R, T, _read_matrix(cfg["truth"]), grid, opts)
        mode = "oracle"
    elif cfg["validation_rows"]:
        nv = int(cfg["validation_rows"])
        if not 0 < nv < R.shape[0]:
            raise UsageError("--validation-rows must be between 1 and N-1")
        n = R.shape[0]
        res = validation_select(R, range(0, n - nv), range(n - nv, n), grid, cfg["kind"], T, opts)
        mode = "validation"
    else:
        raise UsageError("tune needs --truth (oracle mode) or --validation-rows (validation mode)")
    lines = ["# " + h for h in header_lines("tune", cfg)] + ["rho,alpha0,score,status"]
    for rho, score, status in zip(grid.values, res.curve, res.statuses):
        lines.append(f"{rho!r},{RhoGrid.to_alpha(rho)!r},{float(score)!r},{status}")
    path = _write(cfg["out"], "tune.csv", "\n".join(lines) + "\n")
    out.write(f"mode={mode}\nrho_star={res.rho_star:g}\nalpha0_star={res.alpha0_star:.6g}\n"
              f"score_star={res.score_star:.6e}\nwrote {path}\n")
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "check-existence": cmd_check_existence,
    "bench-nmse": cmd_bench_nmse,
    "bench-convergence": cmd_bench_convergence,
    "backtest": cmd_backtest,
    "tune": cmd_tune,
}


def run(argv=None, out=None):
    """Run the CLI and return the exit status instead of exiting."""
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        sys.stderr.write(f"regtyler {args.command}: usage error: {exc}\n")
        return 2
    except (RegTylerError, ValueError, OSError) as exc:
        sys.stderr.write(f"regtyler {args.command}: error: {exc}\n")
        return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
