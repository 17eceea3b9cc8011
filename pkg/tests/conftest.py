import numpy as np
import pytest

from losscomp.fock import DensityMatrix, FockMatrix


def random_state(dim, rank=None, seed=0, pad=0):
    """Random mixed state on ``dim`` levels, zero-padded by ``pad`` levels."""
    rng = np.random.default_rng(seed)
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    full = np.zeros((dim + pad, dim + pad), dtype=complex)
    full[:dim, :dim] = rho
    return DensityMatrix(FockMatrix(full), 0.0)


def kraus_loss(rho, eta):
    """Loss channel from its Kraus operators; independent of the Bernoulli kernel."""
    from math import comb

    D = rho.shape[0]
    out = np.zeros_like(rho, dtype=complex)
    for l in range(D):
        E = np.zeros((D, D))
        for n in range(l, D):
            E[n - l, n] = np.sqrt(comb(n, l) * eta ** (n - l) * (1 - eta) ** l)
        out += E @ rho @ E.T
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: (int(s.split()[1].rstrip(":ab")), s)):
            terminalreporter.write_line(line)
