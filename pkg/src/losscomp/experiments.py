"""Monte-Carlo and exact-data experiments on loss compensation.

Every driver is a pure function of its configuration: per-cell random
streams are keyed by ``(master_seed, N, replica)`` and rows are sorted
before they are returned, so the worker count never changes the output.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .fock import thermal_state
from .homodyne import estimate_density_matrix, pattern_table, sample_quadratures
from .loss import compensate, compensate_with_errors

__all__ = [
    "ConfigError",
    "Fig1Config",
    "LimitOrderConfig",
    "SweepRow",
    "ExactRow",
    "TapRow",
    "run_fig1",
    "run_exact_sweep",
    "run_limit_order",
    "run_tapping_demo",
    "signal_dim",
    "rows_to_csv",
    "rows_to_json",
    "parse_config_text",
    "DIVERGENCE_THRESHOLD",
]

DIVERGENCE_THRESHOLD = 10.0


class ConfigError(ValueError):
    pass


def signal_dim(nbar: float, tail: float = 1e-7) -> int:
    """Smallest Fock cut-off leaving less than `tail` of a thermal state above it."""
    if nbar <= 0:
        return 2
    q = nbar / (1.0 + nbar)
    return max(2, math.ceil(math.log(tail) / math.log(q)))


@dataclass(frozen=True)
class Fig1Config:
    nbar: float = 2.0
    eta: float = 0.48
    N_list: tuple = (1000, 10000, 100000, 1000000)
    jM_list: tuple = tuple(range(31))
    est_dim: int = 1
    master_seed: int = 1997
    replicas: int = 8

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        object.__setattr__(self, "jM_list", tuple(int(j) for j in self.jM_list))
        problems = []
        if not (math.isfinite(self.nbar) and self.nbar >= 0):
            problems.append("nbar must be finite and >= 0")
        if not 0 < self.eta <= 1:
            problems.append("eta must lie in (0, 1]")
        if self.est_dim < 1:
            problems.append("est_dim must be >= 1")
        if not self.N_list or min(self.N_list) < 2:
            problems.append("every N must be >= 2")
        if not self.jM_list or min(self.jM_list) < 0:
            problems.append("every j_M must be >= 0")
        if self.replicas < 1:
            problems.append("replicas must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def table_dim(self) -> int:
        return self.est_dim + max(self.jM_list)


@dataclass(frozen=True)
class LimitOrderConfig:
    nbar: float = 2.0
    eta: float = 0.48
    fixed_jM: int = 10
    N_list: tuple = (1000, 10000, 100000, 1000000)
    fixed_N: int = 1000
    jM_list: tuple = tuple(range(31))
    est_dim: int = 1
    master_seed: int = 1997
    replicas: int = 8

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        object.__setattr__(self, "jM_list", tuple(int(j) for j in self.jM_list))
        if self.fixed_jM < 0 or self.fixed_N < 2:
            raise ConfigError("fixed_jM must be >= 0 and fixed_N >= 2")
        # reuse the Fig-1 checks for the shared fields
        Fig1Config(self.nbar, self.eta, self.N_list, self.jM_list, self.est_dim,
                   self.master_seed, self.replicas)


@dataclass(frozen=True)
class SweepRow:
    N: int
    j_M: int
    replica: int
    rho00_value: float
    rho00_sigma: float
    diverged: bool

    def __post_init__(self):
        if not self.rho00_sigma >= 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class ExactRow:
    j_M: int
    rho00_exact: float


@dataclass(frozen=True)
class TapRow:
    K: int
    eta: float
    mode: str
    mean_abs_error: float
    rms_error: float
    replicas: int


def _is_diverged(value, sigma):
    return abs(value) > DIVERGENCE_THRESHOLD or sigma > DIVERGENCE_THRESHOLD


def _cell(nbar, eta, N, replica, master_seed, est_dim, jMs, table):
    state = thermal_state(nbar, signal_dim(nbar))
    samples = sample_quadratures(state, eta, N, (master_seed, N, replica))
    top = max(jMs)
    est = estimate_density_matrix(samples, est_dim + top, table)
    wanted = set(jMs)
    rows = []
    # the flag is sticky: once any cut-off up to j_M crossed the threshold, the
    # row counts as diverged, whichever cut-offs were requested
    diverged = False
    for j in range(top + 1):
        comp = compensate_with_errors(est, eta, j, est_dim)
        value = float(comp.values[0, 0].real)
        sigma = float(comp.std_real[0, 0])
        diverged = diverged or _is_diverged(value, sigma)
        if j in wanted:
            rows.append(SweepRow(N, j, replica, value, sigma, diverged))
    return rows


def _sorted(rows):
    return sorted(rows, key=lambda r: (r.N, r.j_M, r.replica))


def _run_cells(nbar, eta, cells, master_seed, est_dim, table, threads):
    def work(cell):
        N, replica, jMs = cell
        return _cell(nbar, eta, N, replica, master_seed, est_dim, jMs, table)

    if threads <= 1:
        chunks = [work(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, cells))
    return _sorted(r for chunk in chunks for r in chunk)


def run_fig1(config: Fig1Config = Fig1Config(), threads: int = 1) -> list[SweepRow]:
    """Compensated ``rho_00`` for every ``(N, j_M, replica)`` of the sweep.

    Each ``(N, replica)`` cell draws its own homodyne record, estimates the
    measured matrix up to ``est_dim + max(j_M)`` and compensates it at every
    cut-off. The vacuum element and its propagated error bar are reported;
    ``diverged`` is set once ``|value|`` or ``sigma`` has exceeded
    :data:`DIVERGENCE_THRESHOLD` at any cut-off ``<= j_M``.
    """
    table = pattern_table(config.table_dim)
    cells = [(N, r, config.jM_list) for N in config.N_list for r in range(config.replicas)]
    return _run_cells(config.nbar, config.eta, cells, config.master_seed, config.est_dim, table, threads)


def run_exact_sweep(nbar: float, eta: float, jM_max: int, dim: int) -> list[ExactRow]:
    """Compensate noise-free thermal data ``thermal(eta * nbar)`` at ``j_M = 0..jM_max``."""
    if dim < jM_max + 1:
        raise ConfigError(f"dim {dim} must be at least jM_max + 1 = {jM_max + 1}")
    meas = thermal_state(eta * nbar, dim).matrix
    return [ExactRow(j, float(compensate(meas, eta, j, 1)[0, 0].real)) for j in range(jM_max + 1)]


def run_limit_order(config: LimitOrderConfig = LimitOrderConfig(), threads: int = 1):
    """The two limits taken in opposite orders.

    Returns ``(fixed_cutoff, fixed_ensemble)``: table A holds ``j_M =
    fixed_jM`` for every N in ``N_list``; table B holds ``N = fixed_N`` for
    every ``j_M`` in ``jM_list``. Both use :class:`SweepRow`.
    """
    top = max(max(config.jM_list), config.fixed_jM)
    table = pattern_table(config.est_dim + top)
    cells_a = [(N, r, (config.fixed_jM,)) for N in config.N_list for r in range(config.replicas)]
    cells_b = [(config.fixed_N, r, config.jM_list) for r in range(config.replicas)]
    rows_a = _run_cells(config.nbar, config.eta, cells_a, config.master_seed, config.est_dim, table, threads)
    rows_b = _run_cells(config.nbar, config.eta, cells_b, config.master_seed, config.est_dim, table, threads)
    return rows_a, rows_b


def run_tapping_demo(nbar: float = 2.0, K_list=(4, 8, 16, 32, 64, 128, 256), samples_per_probe: int = 1,
                     master_seed: int = 1997, replicas: int = 256, j_M: int = 5,
                     control_eta: float | None = 0.9) -> list[TapRow]:
    """Reconstruct from K weak probes tapped off one mode.

    Tapping K probes acts like detection at efficiency ``1/K``; each probe
    yields `samples_per_probe` quadrature values. The vacuum element is
    estimated, compensated with cut-off `j_M` and compared with the true
    ``1 / (1 + nbar)``. With `control_eta` the same number of samples is
    also taken at that fixed efficiency.
    """
    if min(K_list) < 2:
        raise ConfigError("every K must be >= 2")
    state = thermal_state(nbar, signal_dim(nbar))
    truth = 1.0 / (1.0 + nbar)
    table = pattern_table(1 + j_M)
    rows = []
    modes = [("tap", None)] + ([("control", control_eta)] if control_eta is not None else [])
    for mode, fixed in modes:
        for K in K_list:
            eta = 1.0 / K if fixed is None else fixed
            n = K * samples_per_probe
            record = sample_quadratures(state, eta, n * replicas, (master_seed, K, 0 if fixed is None else 1))
            errs = np.empty(replicas)
            for r in range(replicas):
                est = estimate_density_matrix(record[r * n:(r + 1) * n], 1 + j_M, table)
                errs[r] = compensate(est.values, eta, j_M, 1)[0, 0].real - truth
            rows.append(TapRow(K, eta, mode, float(np.mean(np.abs(errs))),
                               float(np.sqrt(np.mean(errs**2))), replicas))
    return rows


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def rows_to_csv(rows, columns=None) -> str:
    """CSV with a header; floats at 9 significant digits, booleans as 0/1."""
    rows = list(rows)
    if columns is None:
        columns = [f.name for f in fields(rows[0])] if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = r if isinstance(r, dict) else asdict(r)
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps([r if isinstance(r, dict) else asdict(r) for r in rows], indent=1)


# --------------------------------------------------------------------------
# config files


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Values stay strings; conversion happens against the target schema.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def parse_int_list(text: str) -> tuple:
    """``"1000, 10000"`` or ranges such as ``"0..30"`` (inclusive)."""
    vals = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            vals.extend(range(_parse_int(lo), _parse_int(hi) + 1))
        else:
            vals.append(_parse_int(part))
    if not vals:
        raise ConfigError(f"empty list {text!r}")
    return tuple(vals)


def _parse_int(text):
    text = text.strip()
    try:
        f = float(text)
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}") from None
    if not f.is_integer():
        raise ConfigError(f"not an integer: {text!r}")
    return int(f)
