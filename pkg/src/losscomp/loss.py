"""Generalized Bernoulli (photon-loss) transformation and its inversion.

The loss map and its inverse share one kernel,

    B_j(e) = e**((m+n)/2) * (1-e)**j * sqrt(C(m+j, m) * C(n+j, n)),

evaluated with ``e = eta`` for loss and ``e = 1/eta`` for compensation. For
``e > 1`` the factor ``(1-e)**j`` alternates; its sign is tracked by parity
and the magnitude is computed in the log domain.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .fock import DensityMatrix, FockMatrix

__all__ = [
    "DimensionError",
    "CompensationPlan",
    "EstimateWithError",
    "bernoulli_coefficient",
    "coefficient_matrix",
    "apply_loss",
    "compensate",
    "compensate_multistep",
    "compensate_with_errors",
    "coefficient_growth",
    "thermal_convergence_ratio",
    "default_plan",
]


class DimensionError(ValueError):
    """Input matrix is too small for the requested cut-off."""

    def __init__(self, required: int, actual: int):
        super().__init__(f"input dimension {actual} too small; need at least {required}")
        self.required = required
        self.actual = actual


def _check_eta(eta):
    if not (math.isfinite(eta) and 0.0 < eta <= 1.0):
        raise ValueError(f"efficiency must satisfy 0 < eta <= 1, got {eta}")
    return float(eta)


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def coefficient_matrix(j: int, dim: int, e: float) -> np.ndarray:
    """``B_j(e)`` for all ``0 <= m, n < dim`` as a ``(dim, dim)`` array."""
    if not e > 0:
        raise ValueError(f"kernel argument must be positive, got {e}")
    idx = np.arange(dim, dtype=float)
    half = 0.5 * _log_binom(idx + j, idx)
    log_b = half[:, None] + half[None, :] + 0.5 * (idx[:, None] + idx[None, :]) * math.log(e)
    if j == 0:
        return np.exp(log_b)
    if e == 1.0:
        return np.zeros((dim, dim))
    log_b += j * math.log(abs(1.0 - e))
    sign = -1.0 if (e > 1.0 and j % 2) else 1.0
    return sign * np.exp(log_b)


def bernoulli_coefficient(m: int, n: int, j: int, e: float) -> float:
    """Kernel element ``B_j(e)`` for a single ``(m, n)``.

    Relative accuracy is about 1e-13 for indices up to a few hundred.
    """
    if not e > 0:
        raise ValueError(f"kernel argument must be positive, got {e}")
    if min(m, n, j) < 0:
        raise ValueError("indices must be non-negative")
    if j > 0 and e == 1.0:
        return 0.0
    log_b = 0.5 * (m + n) * math.log(e) + 0.5 * (_log_binom(m + j, m) + _log_binom(n + j, n))
    if j > 0:
        log_b += j * math.log(abs(1.0 - e))
    sign = -1.0 if (e > 1.0 and j % 2) else 1.0
    return sign * math.exp(log_b)


def _shifted_sum(rho: np.ndarray, e: float, j_max: int, out_dim: int) -> np.ndarray:
    # ascending j per element; the order is part of the reproducibility contract
    # overflow surfaces as non-finite entries, which callers turn into NumericalError
    out = np.zeros((out_dim, out_dim), dtype=rho.dtype)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(j_max + 1):
            coeff = coefficient_matrix(j, out_dim, e)
            if not np.any(coeff):
                continue
            out += coeff * rho[j:j + out_dim, j:j + out_dim]
    return out


def apply_loss(rho: DensityMatrix, eta: float) -> DensityMatrix:
    """Propagate a state through a beam-splitter loss of efficiency `eta`.

    The sum over lost photons stops at the stored dimension, so weight that
    would flow down from above the cut-off is missing; that error is bounded
    by the input tail mass. The reported ``trace_deficit`` is ``1 - trace``.
    """
    eta = _check_eta(eta)
    if not isinstance(rho, DensityMatrix):
        rho = DensityMatrix(rho if isinstance(rho, FockMatrix) else FockMatrix(rho))
    src = rho.entries
    D = src.shape[0]
    if eta == 1.0:
        return DensityMatrix(rho.matrix, rho.trace_deficit)
    out = np.zeros_like(src)
    for j in range(D):
        size = D - j
        out[:size, :size] += coefficient_matrix(j, size, eta) * src[j:, j:]
    fm = FockMatrix(out)
    return DensityMatrix(fm, max(1.0 - fm.trace(), 0.0))


def _as_entries(rho):
    if isinstance(rho, DensityMatrix):
        return rho.entries
    if isinstance(rho, FockMatrix):
        return rho.entries
    return FockMatrix(rho).entries


def compensate(rho_meas, eta: float, j_M: int, out_dim: int) -> FockMatrix:
    """Invert the loss map with the series truncated after `j_M` terms.

    ``<m|out|n> = sum_{j=0}^{j_M} B_j(1/eta) <m+j|rho_meas|n+j>`` for
    ``m, n < out_dim``. Nothing forces the result to be a physical state.

    Raises
    ------
    DimensionError
        If ``rho_meas.dim < out_dim + j_M``.
    """
    eta = _check_eta(eta)
    if int(j_M) != j_M or j_M < 0:
        raise ValueError(f"cut-off must be a non-negative integer, got {j_M}")
    if int(out_dim) != out_dim or out_dim < 1:
        raise ValueError(f"out_dim must be a positive integer, got {out_dim}")
    src = _as_entries(rho_meas)
    need = out_dim + j_M
    if src.shape[0] < need:
        raise DimensionError(need, src.shape[0])
    return FockMatrix(_shifted_sum(src, 1.0 / eta, int(j_M), int(out_dim)))


@dataclass(frozen=True)
class CompensationPlan:
    """Sequence of ``(step_eta, j_M)`` compensation runs."""

    steps: tuple

    def __post_init__(self):
        steps = tuple((float(e), int(j)) for e, j in self.steps)
        if not steps:
            raise ValueError("a plan needs at least one step")
        for e, j in steps:
            _check_eta(e)
            if j < 0:
                raise ValueError(f"cut-off must be >= 0, got {j}")
        object.__setattr__(self, "steps", steps)

    @property
    def total_eta(self) -> float:
        return math.prod(e for e, _ in self.steps)

    @property
    def total_cutoff(self) -> int:
        return sum(j for _, j in self.steps)

    def to_json(self) -> str:
        return json.dumps([{"eta": e, "j_M": j} for e, j in self.steps])

    @classmethod
    def from_json(cls, text: str) -> "CompensationPlan":
        return cls(tuple((d["eta"], d["j_M"]) for d in json.loads(text)))


def default_plan(eta: float, j_M: int) -> CompensationPlan:
    """Split `eta` into the fewest equal steps that each exceed 0.5.

    Every step then has bounded inverse coefficients. Each step gets the
    cut-off `j_M`.
    """
    eta = _check_eta(eta)
    k = 1
    while eta ** (1.0 / k) <= 0.5:
        k += 1
    return CompensationPlan(tuple((eta ** (1.0 / k), j_M) for _ in range(k)))


def compensate_multistep(rho_meas, plan: CompensationPlan, out_dim: int) -> FockMatrix:
    """Run :func:`compensate` once per plan step, feeding each result forward.

    The working dimension shrinks by each step's cut-off; the final result
    is restricted to `out_dim`.
    """
    src = _as_entries(rho_meas)
    need = out_dim + plan.total_cutoff
    if src.shape[0] < need:
        raise DimensionError(need, src.shape[0])
    current = FockMatrix(src)
    for e, j in plan.steps:
        current = compensate(current, e, j, current.dim - j)
    return current.restrict(out_dim)


@dataclass(frozen=True)
class EstimateWithError:
    """Matrix estimate with separate standard errors for real and imaginary parts."""

    values: FockMatrix
    std_real: np.ndarray
    std_imag: np.ndarray
    sample_count: int
    out_of_range: int = 0

    def __post_init__(self):
        if not isinstance(self.values, FockMatrix):
            object.__setattr__(self, "values", FockMatrix(self.values))
        for name in ("std_real", "std_imag"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != self.values.entries.shape:
                raise ValueError(f"{name} shape {a.shape} does not match values")
            if np.any(a < 0):
                raise ValueError(f"{name} must be non-negative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def dim(self) -> int:
        return self.values.dim


def compensate_with_errors(est: EstimateWithError, eta: float, j_M: int, out_dim: int) -> EstimateWithError:
    """Compensate an estimate and propagate its error bars.

    Element errors are treated as independent:
    ``sigma_out(m, n)**2 = sum_j B_j(1/eta)**2 * sigma(m+j, n+j)**2``.
    Pattern-function estimates of different elements are in fact
    correlated, so this is an approximation.
    """
    values = compensate(est.values, eta, j_M, out_dim)
    e = 1.0 / eta
    var_re = _shifted_sum_sq(est.std_real, e, j_M, out_dim)
    var_im = _shifted_sum_sq(est.std_imag, e, j_M, out_dim)
    return EstimateWithError(values, np.sqrt(var_re), np.sqrt(var_im), est.sample_count, est.out_of_range)


def _shifted_sum_sq(sigma, e, j_M, out_dim):
    out = np.zeros((out_dim, out_dim))
    for j in range(j_M + 1):
        coeff = coefficient_matrix(j, out_dim, e)
        out += coeff**2 * sigma[j:j + out_dim, j:j + out_dim] ** 2
    return out


def coefficient_growth(m: int, n: int, eta: float, j_max: int) -> np.ndarray:
    """``|B_j(1/eta)|`` for ``j = 0..j_max``."""
    eta = _check_eta(eta)
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    return np.array([abs(bernoulli_coefficient(m, n, j, 1.0 / eta)) for j in range(j_max + 1)])


def thermal_convergence_ratio(eta: float, nbar: float) -> float:
    """Geometric ratio of the vacuum-element inverse series for thermal data.

    For a thermal state of mean `nbar` measured at efficiency `eta` the
    terms of the ``rho_00`` series shrink by ``|1 - 1/eta| * eta*nbar / (1 + eta*nbar)``
    per step; the series converges iff this is below one.
    """
    eta = _check_eta(eta)
    if not nbar > 0:
        raise ValueError("nbar must be positive")
    mean = eta * nbar
    return abs(1.0 - 1.0 / eta) * mean / (1.0 + mean)
