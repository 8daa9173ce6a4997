import numpy as np
import pytest

from multisym import geometry as geo
from multisym import material as mat
from multisym.fields import JetSample


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def jet(F, v0=None, x=None, y=None, lam=None, beta=None):
    """Single jet sample from a deformation gradient."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    N, n = F.shape
    v0 = np.zeros(N) if v0 is None else np.asarray(v0, dtype=float)
    x = np.ones(n) if x is None else np.asarray(x, dtype=float)
    y = np.ones(N) if y is None else np.asarray(y, dtype=float)
    v = np.concatenate([v0[:, None], F], axis=1)
    return JetSample(x, 0.0, y, v, lam, beta)


def flat_model(energy, n=2, rho=1.0, incompressible=False):
    return mat.MaterialModel(rho, energy, geo.euclidean(n), geo.euclidean(n), incompressible=incompressible)


ENERGIES = {
    "constant": lambda: mat.ConstantEnergy(0.7),
    "quadratic": lambda: mat.quadratic_barotropic(1.3),
    "log": mat.log_barotropic,
    "polytropic": lambda: mat.polytropic(1.1, 1.4),
    "stvenant": lambda: mat.StVenantKirchhoff(0.8, 0.6),
    "neohookean": lambda: mat.NeoHookean(0.6, 0.8),
}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; returns ``passed``."""
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
