import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from losscomp.fock import coherent_state, fock_state, thermal_state
from losscomp.homodyne import (
    Grid,
    PatternFunctionTable,
    QuadratureSample,
    SampleSet,
    default_grid,
    estimate_density_matrix,
    hermite_table,
    hermite_wavefunction,
    irregular_wavefunction,
    pattern_function,
    pattern_table,
    quadrature_distribution,
    sample_photon_counts,
    sample_quadratures,
)

from conftest import random_state


def _psi_mp(n, x):
    mpmath.mp.dps = 50
    x = mpmath.mpf(x)
    norm = mpmath.sqrt(mpmath.mpf(2) ** n * mpmath.factorial(n) * mpmath.sqrt(mpmath.pi))
    return float(mpmath.hermite(n, x) * mpmath.exp(-x * x / 2) / norm)


def _psi_prime(n, x):
    psi = hermite_table(n + 1, x)
    d = -math.sqrt((n + 1) / 2) * psi[n + 1]
    if n:
        d += math.sqrt(n / 2) * psi[n - 1]
    return d


# -- eigenfunctions ---------------------------------------------------------

def test_hermite_conventions():
    assert hermite_wavefunction(0, 0.0) == pytest.approx(np.pi**-0.25, abs=1e-15)
    assert hermite_wavefunction(0, 0.0) == pytest.approx(0.75113, abs=1e-5)
    assert hermite_wavefunction(1, 0.0) == 0.0


@pytest.mark.parametrize("n", [0, 1, 7, 40, 100])
@pytest.mark.parametrize("x", [-19.5, -3.3, 0.1, 2.0, 8.75, 20.0])
def test_hermite_matches_mpmath(n, x):
    assert abs(hermite_wavefunction(n, x) - _psi_mp(n, x)) < 1e-10


@pytest.mark.parametrize("n", [0, 5, 25])
def test_hermite_normalized(n):
    val, _ = quad(lambda x: hermite_wavefunction(n, x) ** 2, -np.inf, np.inf, limit=400, epsabs=1e-12)
    assert abs(val - 1) < 1e-8


def test_hermite_table_shape():
    t = hermite_table(3, np.zeros((2, 5)))
    assert t.shape == (4, 2, 5)


# -- quadrature distribution ------------------------------------------------

def test_vacuum_distribution():
    x = np.linspace(-4, 4, 81)
    pr = quadrature_distribution(fock_state(0, 4), 0.3, x)
    assert np.allclose(pr, np.exp(-x**2) / math.sqrt(math.pi), atol=1e-15)
    assert quadrature_distribution(fock_state(0, 4), 0.0, 0.0) == pytest.approx(0.56419, abs=1e-5)


@pytest.mark.parametrize("nbar", [0.5, 2.0])
def test_thermal_is_gaussian(nbar):
    var = (1 + 2 * nbar) / 2
    x = np.linspace(-6, 6, 121)
    s = thermal_state(nbar, 80)
    for theta in (0.0, 1.1, 2.9):
        pr = quadrature_distribution(s, theta, x)
        assert np.allclose(pr, np.exp(-x**2 / (2 * var)) / math.sqrt(2 * math.pi * var), atol=1e-10)


def test_diagonal_state_phase_independent():
    s = random_state(6, seed=8)
    diag = np.diag(s.matrix.diagonal)
    x = np.linspace(-5, 5, 51)
    base = quadrature_distribution(diag, 0.0, x)
    for theta in (0.4, 1.7, 3.0):
        assert np.allclose(quadrature_distribution(diag, theta, x), base, atol=1e-15)


@pytest.mark.parametrize("alpha", [1.0, 1.5, 1.2j, 0.8 - 0.9j])
@pytest.mark.parametrize("theta", [0.0, 0.6, 1.4, 2.5])
def test_coherent_peak_position(alpha, theta):
    # fixes the phase convention: mean quadrature sqrt(2)|alpha|cos(theta - arg alpha)
    s = coherent_state(alpha, 40)
    x = np.linspace(-10, 10, 40001)
    pr = quadrature_distribution(s, theta, x)
    want = math.sqrt(2) * abs(alpha) * math.cos(theta - np.angle(alpha))
    assert abs(x[np.argmax(pr)] - want) < 1e-3
    assert abs(np.trapezoid(x * pr, x) - want) < 1e-8


@pytest.mark.parametrize("state", [thermal_state(2, 60), coherent_state(1 + 1j, 40), random_state(6, seed=3)])
def test_distribution_normalized_on_grid(state):
    g = default_grid(state.dim)
    x = g.points
    for theta in (0.0, 0.9, 2.2):
        total = np.trapezoid(quadrature_distribution(state, theta, x), x)
        assert abs(total - (1 - state.trace_deficit)) < 1e-6


# -- irregular solutions and pattern functions -------------------------------

GRID8 = default_grid(8)


@pytest.mark.parametrize("n", [0, 1, 4, 7])
def test_irregular_parity_and_growth(n):
    phi = irregular_wavefunction(n, GRID8)
    assert np.array_equal(phi, (-1) ** (n + 1) * phi[::-1])
    mid = GRID8.size // 2
    assert abs(phi[-1]) > 1e6 * np.max(np.abs(phi[mid - 200:mid + 200]))


@pytest.mark.parametrize("n", [0, 3, 10, 30])
def test_wronskian_constant(n):
    g = default_grid(n + 1)
    x = g.points
    phi = irregular_wavefunction(n, g)
    dphi = np.gradient(phi, g.h)
    dphi[2:-2] = (phi[:-4] - 8 * phi[1:-3] + 8 * phi[3:-1] - phi[4:]) / (12 * g.h)
    W = hermite_table(n, x)[n] * dphi - _psi_prime(n, x) * phi
    inner = W[2:-2]
    assert np.max(np.abs(inner - inner[inner.size // 2])) < 1e-6 * abs(inner[inner.size // 2])
    assert inner[inner.size // 2] == pytest.approx(2.0, rel=1e-6)


def test_irregular_rejects_small_grid():
    with pytest.raises(ValueError):
        irregular_wavefunction(20, Grid(6.0, 0.005))
    with pytest.raises(ValueError):
        irregular_wavefunction(1, Grid(20.0, 0.02))


def test_pattern_normalization_examples():
    x = GRID8.points
    psi = hermite_table(1, x)
    f00 = pattern_function(0, 0, GRID8)
    assert abs(np.trapezoid(f00 * psi[0] ** 2, x) - 1) < 1e-6
    assert abs(np.trapezoid(f00 * psi[1] ** 2, x)) < 1e-6


@pytest.mark.parametrize("m,n", [(0, 0), (1, 0), (3, 1), (2, 5), (6, 6)])
def test_pattern_parity_symmetry(m, n):
    f = pattern_function(m, n, GRID8)
    assert np.max(np.abs(f - (-1) ** (m + n) * f[::-1])) < 1e-6
    assert np.max(np.abs(f - pattern_function(n, m, GRID8))) < 1e-6


def test_sector_biorthogonality():
    table = PatternFunctionTable.build(7, GRID8)
    x = GRID8.points
    psi = hermite_table(12, x)
    worst = 0.0
    for m in range(7):
        for n in range(7):
            f = table.row(m, n)
            for j in range(13):
                k = j - (m - n)
                if 0 <= k <= 12:
                    want = 1.0 if (j, k) == (m, n) else 0.0
                    worst = max(worst, abs(np.trapezoid(f * psi[j] * psi[k], x) - want))
    assert worst < 1e-5


def test_table_json_round_trip():
    t = PatternFunctionTable.build(3, Grid(12.0, 0.01))
    back = PatternFunctionTable.from_json(t.to_json())
    assert back.dim == 3 and back.grid == t.grid
    assert np.array_equal(back.rows, t.rows)


def test_table_interpolation_is_accurate():
    t = pattern_table(4)
    nodes = t.grid.points[1000:1010]
    assert np.allclose(t.evaluate(2, 3, nodes), t.row(2, 3)[1000:1010], rtol=0, atol=1e-12)
    # midpoints of the table grid are nodes of a half-spacing grid
    fine = Grid(t.grid.x_max, t.grid.h / 2)
    ref = pattern_function(2, 3, fine)
    mids = np.arange(1, fine.size - 1, 2)[200:-200]
    assert np.max(np.abs(t.evaluate(2, 3, fine.points[mids]) - ref[mids])) < 1e-6
    assert t.evaluate(0, 0, np.array([1e3]))[0] == 0.0


# -- sampling ---------------------------------------------------------------

def _variance_within(samples, var, k=5):
    x = samples.x
    n = x.size
    m4 = np.mean((x - x.mean()) ** 4)
    se = math.sqrt((m4 - var**2) / n)
    return abs(x.var(ddof=1) - var) < k * se


def test_vacuum_variance():
    s = sample_quadratures(fock_state(0, 8), 1.0, 100_000, 11)
    assert _variance_within(s, 0.5)


def test_lossy_thermal_variance():
    s = sample_quadratures(thermal_state(2, 40), 0.48, 100_000, 12)
    assert _variance_within(s, (1 + 2 * 0.96) / 2)


def test_coherent_phase_dependence():
    alpha = 1.5
    s = sample_quadratures(coherent_state(alpha, 40), 1.0, 100_000, 5)
    resid = s.x - math.sqrt(2) * alpha * np.cos(s.theta)
    assert abs(resid.mean()) < 5 * math.sqrt(0.5 / s.x.size)
    assert _variance_within(SampleSet(resid, s.theta), 0.5)


def test_single_sample_and_bad_N():
    assert len(sample_quadratures(fock_state(0, 4), 0.9, 1, 0)) == 1
    with pytest.raises(ValueError):
        sample_quadratures(fock_state(0, 4), 0.9, 0, 0)


def test_phases_in_range_and_uniform():
    s = sample_quadratures(fock_state(0, 4), 1.0, 50_000, 3)
    assert s.theta.min() >= 0 and s.theta.max() < np.pi
    hist, _ = np.histogram(s.theta, bins=10, range=(0, np.pi))
    assert np.all(np.abs(hist - 5000) < 5 * math.sqrt(5000))


def test_discrete_phases_are_bin_centres():
    s = sample_quadratures(coherent_state(1, 20), 1.0, 1000, 3, discrete_phases=True, theta_bins=16)
    k = s.theta / (np.pi / 16) - 0.5
    assert np.allclose(k, np.round(k))


def test_sampling_deterministic_and_chunk_independent():
    rho = coherent_state(0.7 + 0.2j, 20)
    a = sample_quadratures(rho, 0.8, 2000, 99)
    b = sample_quadratures(rho, 0.8, 2000, 99)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.theta, b.theta)
    tail = sample_quadratures(rho, 0.8, 1500, 99, start=500)
    assert np.array_equal(a.x[500:], tail.x) and np.array_equal(a.theta[500:], tail.theta)
    c = sample_quadratures(rho, 0.8, 2000, 100)
    assert not np.array_equal(a.x, c.x)


def test_sampling_requires_negligible_tail():
    with pytest.raises(ValueError):
        sample_quadratures(thermal_state(2, 10), 0.5, 10, 0)


def test_samples_csv_round_trip():
    s = sample_quadratures(coherent_state(1j, 20), 0.7, 50, 1)
    text = s.to_csv()
    assert text.splitlines()[0] == "x,theta"
    back = SampleSet.from_csv(text)
    assert np.array_equal(back.x, s.x) and np.array_equal(back.theta, s.theta)
    assert isinstance(s[0], QuadratureSample)


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet([0.0], [np.pi])
    with pytest.raises(ValueError):
        SampleSet([np.inf], [0.0])


# -- estimation -------------------------------------------------------------

def test_moment_path_matches_naive_loop():
    # the grid-moment contraction must equal per-sample interpolation
    rng = np.random.default_rng(4)
    x = rng.normal(scale=1.3, size=300)
    th = rng.uniform(0, np.pi, size=300)
    x[:3] = [40.0, -40.0, 0.0]
    table = pattern_table(5)
    est = estimate_density_matrix(SampleSet(x, th), 5, table)
    assert est.out_of_range == 2
    for m in range(5):
        for n in range(5):
            terms = table.evaluate(m, n, x) * np.exp(1j * (m - n) * th)
            assert abs(est.values[m, n] - terms.mean()) < 1e-12
            assert est.std_real[m, n] == pytest.approx(terms.real.std(ddof=1) / math.sqrt(300), rel=1e-9, abs=1e-14)
            assert est.std_imag[m, n] == pytest.approx(terms.imag.std(ddof=1) / math.sqrt(300), rel=1e-9, abs=1e-14)


def test_vacuum_estimate_within_errors():
    s = sample_quadratures(fock_state(0, 8), 1.0, 100_000, 21)
    est = estimate_density_matrix(s, 4, pattern_table(4))
    truth = np.diag([1.0, 0, 0, 0])
    for m in range(4):
        for n in range(4):
            assert abs(est.values[m, n].real - truth[m, n]) <= 3 * est.std_real[m, n] + 1e-15
            assert abs(est.values[m, n].imag) <= 3 * est.std_imag[m, n] + 1e-15


def test_lossy_thermal_diagonal():
    s = sample_quadratures(thermal_state(2, 40), 0.48, 100_000, 22)
    est = estimate_density_matrix(s, 6, pattern_table(6))
    ref = thermal_state(0.96, 6).matrix.diagonal
    d = est.values.diagonal
    assert np.all(np.abs(d - ref) <= 3 * est.std_real.diagonal())
    assert d[0] == pytest.approx(0.5102, abs=0.01)


def test_coherent_off_diagonals():
    rho = coherent_state(0.6 + 0.5j, 30)
    s = sample_quadratures(rho, 1.0, 100_000, 23)
    est = estimate_density_matrix(s, 4, pattern_table(4))
    ref = rho.entries[:4, :4]
    assert np.all(np.abs(est.values.entries.real - ref.real) <= 3.5 * est.std_real + 1e-12)
    assert np.all(np.abs(est.values.entries.imag - ref.imag) <= 3.5 * est.std_imag + 1e-12)


def test_estimate_hermitian_and_errors():
    s = sample_quadratures(coherent_state(0.5j, 20), 0.9, 500, 1)
    est = estimate_density_matrix(s, 3, pattern_table(3))
    assert np.array_equal(est.values.entries, est.values.entries.conj().T)
    assert np.all(est.std_imag.diagonal() == 0)
    with pytest.raises(ValueError):
        estimate_density_matrix(SampleSet([], []), 3, pattern_table(3))
    with pytest.raises(ValueError):
        estimate_density_matrix(s, 5, pattern_table(3))


def test_estimate_accepts_sample_sequence():
    pairs = [QuadratureSample(0.1, 0.2), (0.5, 1.0), (-0.3, 2.0)]
    est = estimate_density_matrix(pairs, 2, pattern_table(2))
    assert est.sample_count == 3


# -- photon counting cross-check ---------------------------------------------

def test_single_photon_counts():
    h = sample_photon_counts(fock_state(1, 2), 0.48, 100_000, 7)
    p0 = h[0] / 1e5
    assert abs(p0 - 0.52) < 3 * math.sqrt(0.52 * 0.48 / 1e5)


def test_counts_without_loss_match_diagonal():
    rho = thermal_state(1, 30)
    h = sample_photon_counts(rho, 1.0, 100_000, 8)
    p = rho.matrix.diagonal
    assert np.all(np.abs(h / 1e5 - p) <= 4 * np.sqrt(p * (1 - p) / 1e5) + 1e-12)


def test_counts_agree_with_homodyne():
    rho = thermal_state(2, 40)
    h = sample_photon_counts(rho, 0.48, 100_000, 9) / 1e5
    s = sample_quadratures(rho, 0.48, 100_000, 10)
    est = estimate_density_matrix(s, 5, pattern_table(5))
    for n in range(5):
        sig = math.hypot(math.sqrt(h[n] * (1 - h[n]) / 1e5), est.std_real[n, n])
        assert abs(h[n] - est.values[n, n].real) < 3 * sig


def test_counts_reject_bad_N():
    with pytest.raises(ValueError):
        sample_photon_counts(fock_state(1, 2), 0.5, 0, 0)
