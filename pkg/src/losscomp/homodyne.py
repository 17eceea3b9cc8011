"""Monte-Carlo balanced homodyne detection and pattern-function tomography.

Conventions
-----------
The quadrature at local-oscillator phase ``theta`` is
``x = (a exp(-i theta) + a^dag exp(i theta)) / sqrt(2)``, so the vacuum has
``<x^2> = 1/2`` and ``<n|x_theta> = exp(i n theta) psi_n(x)``. This gives

    pr(x, theta) = sum_mn rho_mn exp(-i (m-n) theta) psi_m(x) psi_n(x)

and the matching estimator ``rho_mn = E[f_mn(x) exp(+i (m-n) theta)]``.
A coherent state with real ``alpha > 0`` has its quadrature distribution
centred on ``sqrt(2) alpha cos(theta)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import streams
from .fock import DensityMatrix, FockMatrix
from .loss import EstimateWithError, apply_loss

__all__ = [
    "Grid",
    "QuadratureSample",
    "SampleSet",
    "PatternFunctionTable",
    "default_grid",
    "hermite_wavefunction",
    "hermite_table",
    "quadrature_distribution",
    "irregular_wavefunction",
    "pattern_function",
    "pattern_table",
    "sample_quadratures",
    "estimate_density_matrix",
    "sample_photon_counts",
]

DEFAULT_H = 0.005
THETA_BINS = 256


# --------------------------------------------------------------------------
# grids and oscillator eigenfunctions


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_i = i*h`` for ``i = -M..M`` with ``M*h ~= x_max``."""

    x_max: float
    h: float = DEFAULT_H

    def __post_init__(self):
        if not (self.h > 0 and self.x_max > self.h):
            raise ValueError(f"bad grid x_max={self.x_max}, h={self.h}")

    @property
    def half_points(self) -> int:
        return int(math.ceil(self.x_max / self.h - 1e-9))

    @property
    def points(self) -> np.ndarray:
        M = self.half_points
        return np.arange(-M, M + 1) * self.h

    @property
    def size(self) -> int:
        return 2 * self.half_points + 1

    @property
    def lower(self) -> float:
        return -self.half_points * self.h


def required_x_max(n: int) -> float:
    """Smallest grid half-width accepted for level `n`."""
    return math.sqrt(2.0 * (2 * n + 1)) + 5.0


def default_grid(dim_max: int, h: float = DEFAULT_H) -> Grid:
    return Grid(required_x_max(dim_max), h)


def hermite_table(n_max: int, x) -> np.ndarray:
    """``psi_n(x)`` for ``n = 0..n_max``, shape ``(n_max + 1,) + x.shape``.

    Runs the three-term recurrence without the Gaussian factor and applies
    ``exp(-x^2/2)`` at the end, which avoids early underflow of ``psi_0``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi**-0.25
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(2, n_max + 1):
        out[n] = math.sqrt(2.0 / n) * x * out[n - 1] - math.sqrt((n - 1) / n) * out[n - 2]
    out *= np.exp(-0.5 * x * x)
    return out


def hermite_wavefunction(n: int, x):
    """Normalized oscillator eigenfunction ``psi_n``, ``psi_0 = pi^(-1/4) exp(-x^2/2)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    val = hermite_table(n, x)[n]
    return float(val) if val.ndim == 0 else val


def _derivative(y: np.ndarray, h: float) -> np.ndarray:
    d = np.gradient(y, h, edge_order=2)
    d[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)
    return d


def quadrature_distribution(rho, theta: float, x):
    """Homodyne probability density ``pr(x, theta)``, negative rounding clamped to 0."""
    ent = rho.entries if hasattr(rho, "entries") else FockMatrix(rho).entries
    x_arr = np.asarray(x, dtype=float)
    psi = hermite_table(ent.shape[0] - 1, x_arr.ravel())
    a = np.exp(-1j * np.arange(ent.shape[0]) * theta)[:, None] * psi
    pr = np.einsum("mg,mn,ng->g", a, ent, a.conj()).real
    pr = np.maximum(pr, 0.0).reshape(x_arr.shape)
    return float(pr) if pr.ndim == 0 else pr


# --------------------------------------------------------------------------
# irregular solutions and pattern functions


def _series_start(n: int, xs: np.ndarray) -> np.ndarray:
    # power series of u'' = (x^2 - E) u about 0 with the parity opposite to psi_n
    E = 2 * n + 1
    c = np.zeros(48)
    if n % 2 == 0:
        c[1] = 1.0
    else:
        c[0] = 1.0
    for k in range(46):
        prev = c[k - 2] if k >= 2 else 0.0
        c[k + 2] = (prev - E * c[k]) / ((k + 2) * (k + 1))
    return np.polynomial.polynomial.polyval(xs, c)


def _numerov_unscaled(n_max: int, grid: Grid, refine: int = 4) -> np.ndarray:
    """Unscaled irregular solutions for ``0..n_max``, shape ``(n_max+1, grid.size)``.

    Integrates at step ``h / refine`` (all levels at once) and keeps every
    `refine`-th point; Numerov's error on the growing branch scales as h**4.
    """
    h = grid.h / refine
    M = grid.half_points * refine
    levels = np.arange(n_max + 1)
    xs = np.arange(M + 1) * h
    f = 1.0 - h * h * (xs[:, None] ** 2 - (2 * levels + 1)[None, :]) / 12.0
    a = 12.0 - 10.0 * f
    u = np.empty((M + 1, n_max + 1))
    for n in levels:
        u[:2, n] = _series_start(n, xs[:2])
    for i in range(1, M):
        u[i + 1] = (a[i] * u[i] - f[i - 1] * u[i - 1]) / f[i + 1]
    u = u[::refine].T
    parity = np.where(levels % 2 == 1, 1.0, -1.0)[:, None]
    return np.concatenate([parity * u[:, :0:-1], u], axis=1)


def _check_grid(n: int, grid: Grid):
    need = required_x_max(n)
    if grid.half_points * grid.h < need - 1e-9:
        raise ValueError(f"grid half-width {grid.x_max} too small for level {n}; need {need:.4g}")
    if grid.h > 0.01 + 1e-15:
        raise ValueError(f"grid spacing {grid.h} exceeds 0.01")


@lru_cache(maxsize=16)
def _basis(n_max: int, grid: Grid):
    """Eigenfunctions and scaled irregular solutions for ``0..n_max``."""
    x = grid.points
    psi = hermite_table(n_max, x)
    phi = _numerov_unscaled(n_max, grid)
    for n in range(n_max + 1):
        f = _derivative(psi[n] * phi[n], grid.h)
        phi[n] /= np.trapezoid(f * psi[n] ** 2, x)
    psi.setflags(write=False)
    phi.setflags(write=False)
    return psi, phi


def irregular_wavefunction(n: int, grid: Grid) -> np.ndarray:
    """Non-normalizable solution ``phi_n`` of ``u'' = (x^2 - (2n+1)) u`` on `grid`.

    ``phi_n`` has the parity opposite to ``psi_n`` and is integrated outward
    from the origin with Numerov's method on a refined step. Its scale is chosen so that
    ``int d/dx(psi_n phi_n) psi_n^2 dx = 1``; with this choice the Wronskian
    ``psi_n phi_n' - psi_n' phi_n`` comes out as 2 for every ``n``.
    """
    _check_grid(n, grid)
    return _basis(n, grid)[1][n].copy()


def pattern_function(m: int, n: int, grid: Grid) -> np.ndarray:
    """Symmetrized kernel ``(d/dx(psi_m phi_n) + d/dx(psi_n phi_m)) / 2`` on `grid`."""
    top = max(m, n)
    _check_grid(top, grid)
    psi, phi = _basis(top, grid)
    return _pair_kernel(psi, phi, m, n, grid.h)


def _pair_kernel(psi, phi, m, n, h):
    f = _derivative(psi[m] * phi[n], h)
    if m != n:
        f = 0.5 * (f + _derivative(psi[n] * phi[m], h))
    return f


def _pair_index(dim: int, m: int, n: int) -> int:
    # packed row-major over m <= n
    if m > n:
        m, n = n, m
    return m * dim - m * (m - 1) // 2 + (n - m)


class PatternFunctionTable:
    """Pattern functions ``f_mn`` for ``0 <= m <= n < dim`` tabulated on a grid.

    Rows are stored packed in row-major order over ``m <= n``:
    ``(0,0), (0,1), ..., (0,dim-1), (1,1), ...``.
    """

    def __init__(self, dim: int, grid: Grid, rows: np.ndarray):
        rows = np.asarray(rows, dtype=float)
        expected = (dim * (dim + 1) // 2, grid.size)
        if rows.shape != expected:
            raise ValueError(f"rows shape {rows.shape}, expected {expected}")
        rows.setflags(write=False)
        self.dim = dim
        self.grid = grid
        self.rows = rows

    @classmethod
    def build(cls, dim: int, grid: Grid | None = None) -> "PatternFunctionTable":
        grid = grid or default_grid(dim)
        _check_grid(dim - 1, grid)
        psi, phi = _basis(dim - 1, grid)
        rows = np.empty((dim * (dim + 1) // 2, grid.size))
        for m in range(dim):
            for n in range(m, dim):
                rows[_pair_index(dim, m, n)] = _pair_kernel(psi, phi, m, n, grid.h)
        return cls(dim, grid, rows)

    def row(self, m: int, n: int) -> np.ndarray:
        if not (0 <= m < self.dim and 0 <= n < self.dim):
            raise IndexError(f"({m}, {n}) outside table of dim {self.dim}")
        return self.rows[_pair_index(self.dim, m, n)]

    def evaluate(self, m: int, n: int, x) -> np.ndarray:
        """Cubic (four-point Lagrange) interpolation of ``f_mn``; 0 outside the grid."""
        x = np.asarray(x, dtype=float)
        base, w, ok = _stencil(self.grid, x.ravel())
        row = self.row(m, n)
        val = np.zeros(x.size)
        for k in range(4):
            val[ok] += w[ok, k] * row[base[ok] + k]
        return val.reshape(x.shape)

    def to_json(self) -> str:
        return json.dumps({
            "dim": self.dim,
            "x_max": self.grid.x_max,
            "h": self.grid.h,
            "rows": self.rows.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PatternFunctionTable":
        obj = json.loads(text)
        return cls(int(obj["dim"]), Grid(float(obj["x_max"]), float(obj["h"])), np.asarray(obj["rows"]))


@lru_cache(maxsize=8)
def pattern_table(dim: int, x_max: float | None = None, h: float = DEFAULT_H) -> PatternFunctionTable:
    """Cached :meth:`PatternFunctionTable.build`."""
    grid = Grid(x_max, h) if x_max is not None else default_grid(dim, h)
    return PatternFunctionTable.build(dim, grid)


def _stencil(grid: Grid, x: np.ndarray):
    """Base node index, Lagrange weights for nodes base..base+3, in-range mask."""
    s = (x - grid.lower) / grid.h
    i = np.floor(s)
    ok = (i >= 1) & (i <= grid.size - 3) & np.isfinite(s)
    i = np.where(ok, i, 1).astype(np.int64)
    t = np.where(ok, s - i, 0.0)
    w = np.empty((x.size, 4))
    w[:, 0] = -t * (t - 1.0) * (t - 2.0) / 6.0
    w[:, 1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w[:, 2] = -(t + 1.0) * t * (t - 2.0) / 2.0
    w[:, 3] = (t + 1.0) * t * (t - 1.0) / 6.0
    return i - 1, w, ok


# --------------------------------------------------------------------------
# samples


class QuadratureSample(NamedTuple):
    x: float
    theta: float


class SampleSet:
    """Homodyne record: quadrature values and local-oscillator phases."""

    def __init__(self, x, theta):
        x = np.array(x, dtype=float)
        theta = np.array(theta, dtype=float)
        if x.shape != theta.shape or x.ndim != 1:
            raise ValueError("x and theta must be 1-d arrays of equal length")
        if not np.all(np.isfinite(x)):
            raise ValueError("quadrature values must be finite")
        if np.any((theta < 0) | (theta >= np.pi)):
            raise ValueError("phases must lie in [0, pi)")
        x.setflags(write=False)
        theta.setflags(write=False)
        self.x = x
        self.theta = theta

    def __len__(self):
        return self.x.size

    def __iter__(self):
        for a, b in zip(self.x, self.theta):
            yield QuadratureSample(float(a), float(b))

    def __getitem__(self, i):
        if isinstance(i, slice):
            return SampleSet(self.x[i], self.theta[i])
        return QuadratureSample(float(self.x[i]), float(self.theta[i]))

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        if isinstance(samples, SampleSet):
            return samples
        pairs = list(samples)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,theta\n")
        for a, b in zip(self.x.tolist(), self.theta.tolist()):
            buf.write(f"{a:.17g},{b:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SampleSet":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if [h.strip() for h in header] != ["x", "theta"]:
            raise ValueError(f"expected header 'x,theta', got {header}")
        xs, ts = [], []
        for row in reader:
            if row:
                xs.append(float(row[0]))
                ts.append(float(row[1]))
        return cls(xs, ts)


def _sampling_cdfs(rho: DensityMatrix, grid: Grid, bins: int):
    ent = rho.entries
    D = ent.shape[0]
    x = grid.points
    psi = hermite_table(D - 1, x)
    off = ent - np.diag(ent.diagonal())
    if not np.any(off):
        pr = (ent.diagonal().real @ psi**2)[None, :]
    else:
        # harmonic p collects rho_{m+p, m} psi_{m+p} psi_m
        comps = np.empty((D, x.size), dtype=np.complex128)
        for p in range(D):
            m = np.arange(D - p)
            comps[p] = np.einsum("k,kg,kg->g", ent[m + p, m], psi[m + p], psi[m])
        centres = (np.arange(bins) + 0.5) * np.pi / bins
        phase = np.exp(-1j * np.outer(centres, np.arange(D)))
        phase[:, 1:] *= 2.0
        pr = (phase @ comps).real
    pr = np.maximum(pr, 0.0)
    cdf = cumulative_trapezoid(pr, x, axis=1, initial=0.0)
    cdf /= cdf[:, -1:]
    return cdf


def _invert_cdf(cdf_row, x, u):
    j = np.searchsorted(cdf_row, u, side="right") - 1
    j = np.clip(j, 0, x.size - 2)
    lo = cdf_row[j]
    width = cdf_row[j + 1] - lo
    t = np.where(width > 0, (u - lo) / np.where(width > 0, width, 1.0), 0.5)
    return x[j] + np.clip(t, 0.0, 1.0) * (x[j + 1] - x[j])


def sample_quadratures(rho_sig: DensityMatrix, eta: float, N: int, seed, *,
                       theta_bins: int = THETA_BINS, discrete_phases: bool = False,
                       start: int = 0) -> SampleSet:
    """Simulate `N` homodyne measurements of `rho_sig` behind a loss `eta`.

    The loss is applied to the state; ``x`` is then drawn from
    ``pr(x, theta)`` of the lossy state by inverse-CDF lookup. Phases are
    uniform on ``[0, pi)``; the CDF is tabulated at `theta_bins` bin centres,
    which for off-diagonal states shifts the phase seen by ``x`` by at most
    ``pi / (2 theta_bins)``. With `discrete_phases` the reported phase is the
    bin centre itself and that error disappears.

    Sample ``i`` uses Philox block ``start + i`` of the stream keyed by
    `seed`, so any split of the index range reproduces the same record.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if rho_sig.trace_deficit >= 1e-6:
        raise ValueError(f"state tail {rho_sig.trace_deficit:.3g} above the cut-off is not negligible")
    meas = apply_loss(rho_sig, eta)
    grid = default_grid(rho_sig.dim)
    cdf = _sampling_cdfs(meas, grid, theta_bins)
    u = streams.uniforms(streams.derive_key(seed), start, int(N))
    b = np.minimum((u[:, 0] * theta_bins).astype(np.int64), theta_bins - 1)
    if discrete_phases:
        theta = (b + 0.5) * (np.pi / theta_bins)
    else:
        theta = np.minimum(u[:, 0] * np.pi, np.nextafter(np.pi, 0.0))
    xg = grid.points
    x = np.empty(int(N))
    if cdf.shape[0] == 1:
        x[:] = _invert_cdf(cdf[0], xg, u[:, 1])
    else:
        for k in np.unique(b):
            sel = b == k
            x[sel] = _invert_cdf(cdf[k], xg, u[sel, 1])
    return SampleSet(x, theta)


# --------------------------------------------------------------------------
# estimation

_EST_CHUNK = 1 << 16
_PAIRS = [(k, l) for k in range(4) for l in range(k, 4)]
_PAIR_MULT = np.array([1.0 if k == l else 2.0 for k, l in _PAIRS])[:, None]


def estimate_density_matrix(samples, dim: int, table: PatternFunctionTable) -> EstimateWithError:
    """Pattern-function estimate of ``rho_mn`` for ``m, n < dim``.

    ``rho_mn ~ (1/N) sum_i f_mn(x_i) exp(i (m-n) theta_i)`` with ``f_mn``
    interpolated cubically from `table`. Standard errors are the sample
    standard deviation of the summands over ``sqrt(N)``, separately for the
    real and imaginary parts. Samples outside the table grid add zero and
    are counted in ``out_of_range``.

    Implementation: the sums are linear (and the squared sums quadratic) in
    the interpolation weights, so per-harmonic weight histograms on the grid
    nodes are accumulated once and contracted with every table row.
    """
    s = SampleSet.from_samples(samples)
    N = len(s)
    if N == 0:
        raise ValueError("no samples")
    if table.dim < dim:
        raise ValueError(f"table dim {table.dim} < requested dim {dim}")
    G = table.grid.size
    nb = G - 3
    lin_c = np.zeros((dim, 4, nb))
    lin_s = np.zeros((dim, 4, nb))
    quad = np.zeros((10, nb))
    quad_c = np.zeros((dim, 10, nb))
    out_of_range = 0
    for lo in range(0, N, _EST_CHUNK):
        x = s.x[lo:lo + _EST_CHUNK]
        th = s.theta[lo:lo + _EST_CHUNK]
        base, w, ok = _stencil(table.grid, x)
        out_of_range += int(np.count_nonzero(~ok))
        base, w, th = base[ok], w[ok], th[ok]
        ww = np.stack([w[:, k] * w[:, l] for k, l in _PAIRS]) * _PAIR_MULT
        for q in range(10):
            quad[q] += np.bincount(base, ww[q], nb)
        for p in range(dim):
            c, sn = np.cos(p * th), np.sin(p * th)
            c2 = np.cos(2 * p * th)
            for k in range(4):
                lin_c[p, k] += np.bincount(base, w[:, k] * c, nb)
                lin_s[p, k] += np.bincount(base, w[:, k] * sn, nb)
            for q in range(10):
                quad_c[p, q] += np.bincount(base, ww[q] * c2, nb)

    values = np.zeros((dim, dim), dtype=np.complex128)
    std_re = np.zeros((dim, dim))
    std_im = np.zeros((dim, dim))
    for n in range(dim):
        for m in range(n, dim):
            p = m - n
            row = table.row(m, n)
            win = np.stack([row[k:k + nb] for k in range(4)])
            sum_re = float(np.sum(win * lin_c[p]))
            sum_im = float(np.sum(win * lin_s[p]))
            prod = np.stack([win[k] * win[l] for k, l in _PAIRS])
            sq_re = 0.5 * float(np.sum(prod * (quad + quad_c[p])))
            sq_im = 0.5 * float(np.sum(prod * (quad - quad_c[p])))
            mean_re, mean_im = sum_re / N, sum_im / N
            values[m, n] = mean_re + 1j * mean_im
            values[n, m] = mean_re - 1j * mean_im
            if N > 1:
                var_re = max(sq_re - N * mean_re**2, 0.0) / (N - 1)
                var_im = max(sq_im - N * mean_im**2, 0.0) / (N - 1)
                std_re[m, n] = std_re[n, m] = math.sqrt(var_re / N)
                std_im[m, n] = std_im[n, m] = math.sqrt(var_im / N)
    return EstimateWithError(FockMatrix(values), std_re, std_im, N, out_of_range)


def sample_photon_counts(rho: DensityMatrix, eta: float, N: int, seed) -> np.ndarray:
    """Histogram of photon numbers after binomial thinning, length ``rho.dim``.

    Draws ``n`` from the diagonal of `rho`, keeps each photon with
    probability `eta`, and counts the survivors. ``counts / N`` estimates
    ``diag(apply_loss(rho, eta))``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not 0 < eta <= 1:
        raise ValueError(f"efficiency must satisfy 0 < eta <= 1, got {eta}")
    p = np.clip(rho.matrix.diagonal, 0.0, None)
    rng = streams.generator(seed)
    n = rng.choice(p.size, size=int(N), p=p / p.sum())
    kept = rng.binomial(n, eta)
    return np.bincount(kept, minlength=p.size)
