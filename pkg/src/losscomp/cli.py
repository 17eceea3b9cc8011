"""Command-line front end.

Every subcommand reads its parameters from (highest first) command-line
flags, the ``--config`` file, and built-in defaults. Exit codes: 0 success,
2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .fock import NumericalError, coherent_state, fock_state, from_json, thermal_state, to_json
from .homodyne import estimate_density_matrix, pattern_table, sample_quadratures
from .loss import CompensationPlan, apply_loss, compensate, compensate_multistep, compensate_with_errors, default_plan

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SWEEP_COLUMNS = ["N", "j_M", "replica", "rho00_value", "rho00_sigma", "diverged"]
EXACT_COLUMNS = ["j_M", "rho00_exact"]
TAP_COLUMNS = ["mode", "K", "eta", "mean_abs_error", "rms_error", "replicas"]

# (name, parser, default, help) per subcommand; names double as config keys
_STATE = [
    ("kind", str, "thermal", "thermal | coherent | fock"),
    ("nbar", float, 2.0, "thermal mean photon number"),
    ("alpha", complex, 1.0, "coherent amplitude, e.g. 1+0.5j"),
    ("fock_n", int, 0, "Fock-state photon number"),
    ("dim", int, 40, "Fock cut-off D"),
]
PARAMS = {
    "state": _STATE,
    "loss": [
        ("input", str, None, "state JSON file"),
        ("eta", float, 0.48, "detection efficiency"),
    ],
    "compensate": [
        ("input", str, None, "measured matrix JSON file"),
        ("eta", float, 0.48, "detection efficiency"),
        ("jm", int, 60, "series cut-off j_M (per step when multi-step)"),
        ("out_dim", int, 10, "output dimension"),
        ("steps", int, 1, "0 = default factorization into steps above 0.5, k = k equal steps"),
        ("plan", str, None, "plan JSON file [{eta, j_M}, ...]; overrides eta/jm/steps"),
    ],
    "simulate": _STATE + [
        ("eta", float, 0.48, "detection efficiency"),
        ("N", int, 100000, "number of homodyne samples"),
        ("est_dim", int, 6, "estimated matrix dimension"),
        ("jm", int, -1, "if >= 0, also compensate with this cut-off"),
        ("out_dim", int, 1, "compensated output dimension"),
        ("samples_out", str, None, "write raw samples here (CSV x,theta)"),
    ],
    "fig1": [
        ("nbar", float, 2.0, "thermal mean photon number"),
        ("eta", float, 0.48, "detection efficiency"),
        ("N_list", ex.parse_int_list, "1000,10000,100000,1000000", "ensemble sizes"),
        ("jM_list", ex.parse_int_list, "0..30", "cut-offs"),
        ("est_dim", int, 1, "compensated output dimension"),
        ("replicas", int, 8, "independent replicas per N"),
    ],
    "exact-sweep": [
        ("nbar", float, 2.0, "thermal mean photon number"),
        ("eta", float, 0.48, "detection efficiency"),
        ("jM_max", int, 60, "largest cut-off"),
        ("dim", int, 120, "Fock cut-off of the exact data"),
    ],
    "limit-order": [
        ("nbar", float, 2.0, "thermal mean photon number"),
        ("eta", float, 0.48, "detection efficiency"),
        ("fixed_jM", int, 10, "cut-off of table A"),
        ("N_list", ex.parse_int_list, "1000,10000,100000,1000000", "ensemble sizes of table A"),
        ("fixed_N", int, 1000, "ensemble size of table B"),
        ("jM_list", ex.parse_int_list, "0..30", "cut-offs of table B"),
        ("est_dim", int, 1, "compensated output dimension"),
        ("replicas", int, 8, "independent replicas"),
    ],
    "tap-demo": [
        ("nbar", float, 2.0, "thermal mean photon number"),
        ("K_list", ex.parse_int_list, "4,8,16,32,64,128,256", "numbers of tapped probes"),
        ("samples_per_probe", int, 1, "quadrature samples per probe"),
        ("replicas", int, 256, "replicas per K"),
        ("jm", int, 5, "series cut-off"),
        ("control_eta", float, 0.9, "fixed efficiency of the control run (<= 0 disables)"),
    ],
}

COLUMN_DOCS = {
    "fig1": "CSV columns: " + ",".join(SWEEP_COLUMNS) + " (diverged is 0/1; rows sorted by N, j_M, replica)",
    "limit-order": "CSV columns: table," + ",".join(SWEEP_COLUMNS) + " (table A = fixed j_M, B = fixed N)",
    "exact-sweep": "CSV columns: " + ",".join(EXACT_COLUMNS),
    "tap-demo": "CSV columns: " + ",".join(TAP_COLUMNS),
    "simulate": "JSON estimate {dim, entries, std_real, std_imag, sample_count, out_of_range}",
}


def _parse_complex(text):
    return complex(str(text).replace(" ", ""))


def _coerce(fn, value):
    if fn is complex:
        return _parse_complex(value)
    return fn(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="losscomp", description="Loss compensation for homodyne tomography.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in PARAMS.items():
        p = sub.add_parser(name, help=COLUMN_DOCS.get(name), description=COLUMN_DOCS.get(name))
        p.add_argument("--config", help="key = value file; keys are the parameter names "
                       "(e.g. N_list, jM_list, eta), '#' starts a comment")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--out", help="output path (.csv or .json); stdout if omitted")
        p.add_argument("--threads", type=int, default=None, help="worker threads (does not change results)")
        for key, _, default, text in spec:
            flag = "--" + key.lower().replace("_", "-")
            p.add_argument(flag, dest=key, default=None, help=f"{text} (default: {default})")
    return parser


def _resolve(args) -> dict:
    spec = PARAMS[args.command]
    from_file = {}
    if args.config:
        try:
            from_file = ex.parse_config_text(Path(args.config).read_text())
        except OSError as exc:
            raise ex.ConfigError(f"cannot read config: {exc}") from None
    known = {k for k, *_ in spec} | {"seed", "threads"}
    unknown = set(from_file) - known
    if unknown:
        raise ex.ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, fn, default, _ in spec:
        raw = getattr(args, key)
        if raw is None:
            raw = from_file.get(key, default)
        try:
            out[key] = None if raw is None else _coerce(fn, raw)
        except (TypeError, ValueError) as exc:
            raise ex.ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    seed = args.seed if args.seed is not None else from_file.get("seed", 1997)
    threads = args.threads if args.threads is not None else from_file.get("threads", 1)
    try:
        out["seed"] = int(seed)
        out["threads"] = int(threads)
    except ValueError as exc:
        raise ex.ConfigError(str(exc)) from None
    if not 0 <= out["seed"] < 2**64:
        raise ex.ConfigError("seed must be an unsigned 64-bit integer")
    if out["threads"] < 1:
        raise ex.ConfigError("threads must be >= 1")
    return out


def _make_state(p):
    kind = p["kind"]
    if kind == "thermal":
        return thermal_state(p["nbar"], p["dim"])
    if kind == "coherent":
        return coherent_state(p["alpha"], p["dim"])
    if kind == "fock":
        return fock_state(p["fock_n"], p["dim"])
    raise ex.ConfigError(f"unknown state kind {kind!r}")


def _read_matrix(path):
    if path is None:
        raise ex.ConfigError("--input is required")
    try:
        return from_json(Path(path).read_text())
    except OSError as exc:
        raise ex.ConfigError(f"cannot read {path}: {exc}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"malformed matrix file {path}: {exc}") from None


def _estimate_json(est) -> str:
    return json.dumps({
        "dim": est.dim,
        "entries": [[float(z.real), float(z.imag)] for z in est.values.entries.ravel()],
        "std_real": est.std_real.ravel().tolist(),
        "std_imag": est.std_imag.ravel().tolist(),
        "sample_count": est.sample_count,
        "out_of_range": est.out_of_range,
    })


def _tabular(rows, columns, out):
    if out and out.endswith(".json"):
        return ex.rows_to_json(rows)
    return ex.rows_to_csv(rows, columns)


def _check_finite(values):
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise NumericalError("non-finite value in output")


def run(args) -> str:
    p = _resolve(args)
    cmd = args.command
    if cmd == "state":
        return to_json(_make_state(p))
    if cmd == "loss":
        state = _read_matrix(p["input"])
        if not hasattr(state, "trace_deficit"):
            raise ex.ConfigError("loss needs a state with trace_deficit")
        return to_json(apply_loss(state, p["eta"]))
    if cmd == "compensate":
        meas = _read_matrix(p["input"])
        if p["plan"]:
            plan = CompensationPlan.from_json(Path(p["plan"]).read_text())
            return to_json(compensate_multistep(meas, plan, p["out_dim"]))
        if p["steps"] == 1:
            return to_json(compensate(meas, p["eta"], p["jm"], p["out_dim"]))
        if p["steps"] == 0:
            plan = default_plan(p["eta"], p["jm"])
        else:
            k = p["steps"]
            plan = CompensationPlan(tuple((p["eta"] ** (1.0 / k), p["jm"]) for _ in range(k)))
        return to_json(compensate_multistep(meas, plan, p["out_dim"]))
    if cmd == "simulate":
        state = _make_state(p)
        samples = sample_quadratures(state, p["eta"], p["N"], p["seed"])
        if p["samples_out"]:
            Path(p["samples_out"]).write_text(samples.to_csv())
        need = p["est_dim"]
        table = pattern_table(need)
        est = estimate_density_matrix(samples, need, table)
        if p["jm"] >= 0:
            est = compensate_with_errors(est, p["eta"], p["jm"], p["out_dim"])
        return _estimate_json(est)
    if cmd == "fig1":
        cfg = ex.Fig1Config(p["nbar"], p["eta"], p["N_list"], p["jM_list"], p["est_dim"], p["seed"], p["replicas"])
        rows = ex.run_fig1(cfg, threads=p["threads"])
        _check_finite([r.rho00_value for r in rows])
        return _tabular(rows, SWEEP_COLUMNS, args.out)
    if cmd == "exact-sweep":
        rows = ex.run_exact_sweep(p["nbar"], p["eta"], p["jM_max"], p["dim"])
        _check_finite([r.rho00_exact for r in rows])
        return _tabular(rows, EXACT_COLUMNS, args.out)
    if cmd == "limit-order":
        cfg = ex.LimitOrderConfig(p["nbar"], p["eta"], p["fixed_jM"], p["N_list"], p["fixed_N"],
                                  p["jM_list"], p["est_dim"], p["seed"], p["replicas"])
        a, b = ex.run_limit_order(cfg, threads=p["threads"])
        _check_finite([r.rho00_value for r in a + b])
        rows = [dict(table="A", **r.__dict__) for r in a] + [dict(table="B", **r.__dict__) for r in b]
        return _tabular(rows, ["table"] + SWEEP_COLUMNS, args.out)
    if cmd == "tap-demo":
        control = p["control_eta"] if p["control_eta"] > 0 else None
        rows = ex.run_tapping_demo(p["nbar"], p["K_list"], p["samples_per_probe"], p["seed"],
                                   p["replicas"], p["jm"], control)
        return _tabular(rows, TAP_COLUMNS, args.out)
    raise ex.ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = run(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
