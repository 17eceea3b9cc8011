"""Truncated Fock-basis density matrices.

States keep the probability weight lost to truncation in an explicit
``trace_deficit`` rather than being renormalized.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

__all__ = [
    "FockMatrix",
    "DensityMatrix",
    "ValidationReport",
    "TruncationWarning",
    "NumericalError",
    "thermal_state",
    "coherent_state",
    "fock_state",
    "validate",
    "max_abs_diff",
    "to_json",
    "from_json",
]


class NumericalError(ArithmeticError):
    """A computation produced NaN or infinite values."""


class TruncationWarning(UserWarning):
    """Probability weight above the Fock cut-off is not negligible."""


@dataclass(frozen=True)
class FockMatrix:
    """Hermitian matrix of elements <m|rho|n>, 0 <= m, n < dim.

    The input is Hermitian-symmetrized on construction, so
    ``entries[n, m] == conj(entries[m, n])`` holds exactly. The matrix need
    not be a physical state (trace and positivity are not checked).
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericalError("matrix entries must be finite")
        a = 0.5 * (a + a.conj().T)
        a[np.diag_indices_from(a)] = a.diagonal().real
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def trace(self) -> float:
        return float(self.entries.diagonal().real.sum())

    def __getitem__(self, idx):
        return self.entries[idx]

    def restrict(self, dim: int) -> "FockMatrix":
        """Top-left ``dim x dim`` block."""
        if not 1 <= dim <= self.dim:
            raise ValueError(f"cannot restrict dim {self.dim} matrix to {dim}")
        return FockMatrix(self.entries[:dim, :dim])

    def purity(self) -> float:
        return float(np.real(np.vdot(self.entries, self.entries)))


@dataclass(frozen=True)
class DensityMatrix:
    """A validated state together with its truncation deficit."""

    matrix: FockMatrix
    trace_deficit: float = 0.0

    def __post_init__(self):
        if not isinstance(self.matrix, FockMatrix):
            object.__setattr__(self, "matrix", FockMatrix(self.matrix))
        if not self.trace_deficit >= 0.0:
            raise ValueError(f"trace_deficit must be >= 0, got {self.trace_deficit}")

    @property
    def dim(self) -> int:
        return self.matrix.dim

    @property
    def entries(self) -> np.ndarray:
        return self.matrix.entries


@dataclass(frozen=True)
class ValidationReport:
    """Failed checks from :func:`validate`."""

    trace: float
    expected_trace: float
    min_eigenvalue: float
    max_asymmetry: float
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return False

    def __str__(self):
        return "; ".join(self.violations)


def _check_dim(D):
    if int(D) != D or D < 1:
        raise ValueError(f"dimension must be a positive integer, got {D}")
    return int(D)


def thermal_state(nbar: float, D: int) -> DensityMatrix:
    """Thermal state with mean photon number `nbar`, truncated at `D` levels.

    ``rho_nn = nbar**n / (1 + nbar)**(n + 1)``; the geometric tail above the
    cut-off, ``(nbar / (1 + nbar))**D``, is kept as the trace deficit.
    """
    D = _check_dim(D)
    if not (math.isfinite(nbar) and nbar >= 0):
        raise ValueError(f"mean photon number must be finite and >= 0, got {nbar}")
    n = np.arange(D)
    if nbar == 0:
        p = (n == 0).astype(float)
        deficit = 0.0
    else:
        q = nbar / (1.0 + nbar)
        p = np.exp(n * math.log(q)) / (1.0 + nbar)
        deficit = q**D
    return DensityMatrix(FockMatrix(np.diag(p)), deficit)


def coherent_state(alpha: complex, D: int, tail_tol: float = 1e-6, strict: bool = False) -> DensityMatrix:
    """Pure coherent state |alpha><alpha| truncated at `D` levels.

    Emits :class:`TruncationWarning` (or raises ``ValueError`` when
    `strict`) if the Poisson weight above the cut-off exceeds `tail_tol`.
    """
    D = _check_dim(D)
    alpha = complex(alpha)
    mean = abs(alpha) ** 2
    deficit = float(poisson.sf(D - 1, mean)) if mean > 0 else 0.0
    if deficit > tail_tol:
        msg = f"coherent state |alpha|^2={mean:g} loses {deficit:.3g} above D={D}"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=2)
    n = np.arange(D)
    if mean == 0:
        amp = (n == 0).astype(np.complex128)
    else:
        log_mag = -0.5 * mean + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
        amp = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return DensityMatrix(FockMatrix(np.outer(amp, amp.conj())), deficit)


def fock_state(n: int, D: int) -> DensityMatrix:
    D = _check_dim(D)
    if int(n) != n or not 0 <= n < D:
        raise ValueError(f"photon number {n} outside 0..{D - 1}")
    rho = np.zeros((D, D))
    rho[int(n), int(n)] = 1.0
    return DensityMatrix(FockMatrix(rho), 0.0)


def validate(m, tol: float = 1e-8, trace_deficit: float = 0.0):
    """Check that `m` is a physical state.

    Parameters
    ----------
    m : FockMatrix or array_like
        Candidate matrix.
    tol : float
        Tolerance for the trace test and for negative eigenvalues.
    trace_deficit : float
        Weight declared to sit above the truncation; the trace is compared
        with ``1 - trace_deficit``.

    Returns
    -------
    DensityMatrix or ValidationReport
        The report is falsy and lists every violated check.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    raw = np.asarray(m.entries if isinstance(m, FockMatrix) else m, dtype=np.complex128)
    asym = float(np.max(np.abs(raw - raw.conj().T))) if raw.size else 0.0
    fm = m if isinstance(m, FockMatrix) else FockMatrix(raw)
    tr = fm.trace()
    expected = 1.0 - trace_deficit
    min_eig = float(np.linalg.eigvalsh(fm.entries)[0])
    violations = []
    if abs(tr - expected) > tol:
        violations.append(f"trace {tr:.12g} differs from {expected:.12g}")
    if min_eig < -tol:
        violations.append(f"min eigenvalue {min_eig:.6g} < -{tol:g}")
    if asym > tol:
        violations.append(f"asymmetry {asym:.3g} > {tol:g}")
    if violations:
        return ValidationReport(tr, expected, min_eig, asym, violations)
    return DensityMatrix(fm, max(1.0 - tr, 0.0))


def max_abs_diff(a, b) -> float:
    ea = a.entries if hasattr(a, "entries") else np.asarray(a)
    eb = b.entries if hasattr(b, "entries") else np.asarray(b)
    if ea.shape != eb.shape:
        raise ValueError(f"dimension mismatch: {ea.shape} vs {eb.shape}")
    return float(np.max(np.abs(ea - eb)))


def to_json(state) -> str:
    """Serialize a FockMatrix or DensityMatrix.

    Layout: ``{"dim", "entries": [[re, im], ...] row-major, "trace_deficit"}``;
    ``trace_deficit`` is ``null`` for a bare FockMatrix. Floats are written
    with shortest round-trip repr, so decoding is exact.
    """
    if isinstance(state, DensityMatrix):
        fm, deficit = state.matrix, float(state.trace_deficit)
    else:
        fm, deficit = state, None
    flat = fm.entries.ravel()
    return json.dumps({
        "dim": fm.dim,
        "entries": [[float(z.real), float(z.imag)] for z in flat],
        "trace_deficit": deficit,
    })


def from_json(text: str):
    obj = json.loads(text)
    dim = int(obj["dim"])
    pairs = np.asarray(obj["entries"], dtype=float).reshape(dim * dim, 2)
    fm = FockMatrix((pairs[:, 0] + 1j * pairs[:, 1]).reshape(dim, dim))
    if obj.get("trace_deficit") is None:
        return fm
    return DensityMatrix(fm, float(obj["trace_deficit"]))
