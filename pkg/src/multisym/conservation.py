"""Symmetry generators, momentum maps and Noether currents.

A current has a density ``J0`` (coefficient of ``d^n x_0``) and a flux
``Jk`` (coefficients of ``d^n x_k``).  The generic path contracts the
prolonged generator with the Cartan coefficients::

    J^mu = p_a^mu xi^a + (Pi + p_a^nu v^a_nu) xi^mu - p_a^mu v^a_nu xi^nu

The closed forms for fluids and for time translation are coded separately
so that the two paths can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import smallmat as sm
from .dynamics import (
    ConstrainedState,
    _mid_level,
    _sqrt_det,
    el_residual_barotropic,
    el_residual_constrained,
)
from .errors import MissingMultiplier, ShapeError, WrongEnergyKind
from .fields import ConfigurationField, JetSample, SpaceTimeGrid, jet_field, spatial_diff
from .material import (
    MaterialModel,
    cartan_coefficients,
    energy_density,
    jacobian,
    material_pressure,
    piola_kirchhoff,
    stored_energy,
    total_lagrangian,
)

__all__ = [
    "SymmetryGenerator",
    "Prolongation",
    "NoetherCurrent",
    "NoetherCheck",
    "relabeling",
    "translation",
    "stream_relabeling",
    "sine_stream",
    "time_translation",
    "solenoidality_defect",
    "prolong_generator",
    "momentum_map",
    "barotropic_current",
    "incompressible_current",
    "time_translation_current",
    "current_field",
    "noether_divergence",
    "energy_continuity_residual",
    "noether_implies_el_check",
    "relabel_jet",
    "equivariance_defect",
    "random_unimodular",
]

SOLENOIDAL_TOL = 1e-10


@dataclass
class SymmetryGenerator:
    """Relabeling ``xi(x)`` of the reference body or time translation ``zeta d/dt``.

    ``dxi(x)`` returns ``[..., m, j] = d xi^m / d x^j``.
    """

    kind: str
    xi: Callable | None = None
    dxi: Callable | None = None
    zeta: float = 0.0
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in ("relabeling", "time_translation"):
            raise ValueError("generator kind must be 'relabeling' or 'time_translation'")
        if self.kind == "relabeling" and (self.xi is None or self.dxi is None):
            raise ValueError("relabeling needs xi and its derivative")

    def base(self, x) -> np.ndarray:
        """Base components ``(xi^0, xi^1, ..., xi^n)`` at points ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (x.shape[-1] + 1,))
        if self.kind == "relabeling":
            out[..., 1:] = self.xi(x)
        else:
            out[..., 0] = self.zeta
        return out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        if self.kind == "relabeling":
            return np.asarray(self.dxi(x), dtype=float)
        return np.zeros(x.shape[:-1] + (n, n))


def relabeling(xi: Callable, dxi: Callable, dim: int | None = None) -> SymmetryGenerator:
    return SymmetryGenerator("relabeling", xi, dxi, dim=dim)


def translation(c) -> SymmetryGenerator:
    """Constant relabeling field ``xi = c``."""
    c = np.asarray(c, dtype=float)
    n = c.size

    def xi(x):
        return np.broadcast_to(c, np.shape(x)[:-1] + (n,)).copy()

    def dxi(x):
        return np.zeros(np.shape(x)[:-1] + (n, n))

    return SymmetryGenerator("relabeling", xi, dxi, dim=n)


def stream_relabeling(grad_psi: Callable, hess_psi: Callable) -> SymmetryGenerator:
    """Planar relabeling ``xi = (-d2 psi, d1 psi)`` from a stream function."""

    def xi(x):
        g = grad_psi(x)
        return np.stack([-g[..., 1], g[..., 0]], axis=-1)

    def dxi(x):
        h = hess_psi(x)
        return np.stack([-h[..., 1, :], h[..., 0, :]], axis=-2)

    return SymmetryGenerator("relabeling", xi, dxi, dim=2)


def sine_stream(k: float = 1.0, amplitude: float = 1.0) -> SymmetryGenerator:
    """Stream function ``psi = a sin(k x1) sin(k x2)``."""

    def grad(x):
        s1, s2 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
        c1, c2 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
        return amplitude * k * np.stack([c1 * s2, s1 * c2], axis=-1)

    def hess(x):
        s1, s2 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
        c1, c2 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
        a = amplitude * k * k
        return np.stack([np.stack([-a * s1 * s2, a * c1 * c2], -1),
                         np.stack([a * c1 * c2, -a * s1 * s2], -1)], -2)

    return stream_relabeling(grad, hess)


def time_translation(zeta: float = 1.0) -> SymmetryGenerator:
    return SymmetryGenerator("time_translation", zeta=float(zeta))


def solenoidality_defect(gen: SymmetryGenerator, grid: SpaceTimeGrid, G=None) -> float:
    """Max ``|div xi|`` (Riemannian when ``G`` is given) and normal flow on fixed faces."""
    if gen.kind != "relabeling":
        return 0.0
    x = grid.coords()
    div = np.trace(gen.gradient(x), axis1=-2, axis2=-1)
    xi = gen.xi(x)
    if G is not None and not G.constant:
        h = 1e-6 * float(np.max(grid.lengths))
        logs = []
        for k in range(grid.n_space):
            e = np.zeros(grid.n_space)
            e[k] = h
            logs.append((np.log(_sqrt_det(G, x + e)) - np.log(_sqrt_det(G, x - e))) / (2 * h))
        div = div + np.einsum("...k,...k->...", xi, np.stack(logs, -1))
    worst = float(np.max(np.abs(div)))
    for k in range(grid.n_space):
        if not grid.periodic(k):
            for end in (0, -1):
                idx = [slice(None)] * grid.n_space
                idx[k] = end
                worst = max(worst, float(np.max(np.abs(xi[tuple(idx)][..., k]))))
    return worst


@dataclass
class Prolongation:
    """Components of a prolonged generator at a jet point."""

    base: np.ndarray     # (..., n+1): time component first
    fiber: np.ndarray    # (..., N)
    lam: np.ndarray      # (...,)
    v: np.ndarray        # (..., N, n+1)
    beta: np.ndarray     # (..., n+1)


def prolong_generator(gen: SymmetryGenerator, sample: JetSample) -> Prolongation:
    """Jet prolongation of a base generator.

    Relabelings act on jets by ``delta v^a_j = -v^a_m d_j xi^m`` and
    ``delta beta_j = -beta_m d_j xi^m``; time translation has no jet part.
    """
    x = np.asarray(sample.x, dtype=float)
    n = x.shape[-1]
    if sample.v.shape[-1] != n + 1:
        raise ShapeError("jet velocities do not match the base dimension")
    base = gen.base(x)
    batch = base.shape[:-1]
    dv = np.zeros(batch + sample.v.shape[-2:])
    dbeta = np.zeros(batch + (n + 1,))
    if gen.kind == "relabeling":
        dxi = gen.gradient(x)
        dv[..., 1:] = -np.einsum("...am,...mj->...aj", sample.F, dxi)
        if sample.beta is not None:
            dbeta[..., 1:] = -np.einsum("...m,...mj->...j", np.asarray(sample.beta)[..., 1:], dxi)
    return Prolongation(base, np.zeros(batch + (sample.N,)), np.zeros(batch), dv, dbeta)


@dataclass
class NoetherCurrent:
    J0: np.ndarray
    Jk: np.ndarray

    def __sub__(self, other):
        return NoetherCurrent(self.J0 - other.J0, self.Jk - other.Jk)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.J0)), np.max(np.abs(self.Jk))))


def momentum_map(model: MaterialModel, sample: JetSample, gen: SymmetryGenerator) -> NoetherCurrent:
    """Generic contraction of the prolonged generator with the Cartan coefficients."""
    pj, p0, Pi = cartan_coefficients(model, sample)
    pro = prolong_generator(gen, sample)
    p = np.concatenate([p0[..., None], pj], axis=-1)            # p[..., a, mu]
    xi = pro.base                                               # xi^mu
    pv = np.einsum("...am,...am->...", p, sample.v)
    v_xi = np.einsum("...an,...n->...a", sample.v, xi)          # v^a_nu xi^nu
    J = (np.einsum("...am,...a->...m", p, pro.fiber)
         + (Pi + pv)[..., None] * xi
         - np.einsum("...am,...a->...m", p, v_xi))
    return NoetherCurrent(J[..., 0], J[..., 1:])


def _kinetic(model, s):
    g = model.g.checked(s.y)
    return 0.5 * model.density(s.x) * np.einsum("...a,...ab,...b->...", s.v0, g, s.v0)


def barotropic_current(model: MaterialModel, sample: JetSample, gen: SymmetryGenerator) -> NoetherCurrent:
    """Relabeling current of a barotropic fluid in closed form."""
    if model.energy.kind != "barotropic":
        raise WrongEnergyKind("closed-form fluid current needs a barotropic energy")
    s = sample
    xi = gen.xi(s.x)
    sg = _sqrt_det(model.G, s.x)
    rho = model.density(s.x)
    g = model.g.checked(s.y)
    P = material_pressure(model, s)
    J = jacobian(model, s)
    flux = (_kinetic(model, s) - rho * stored_energy(model, s) - P * J) * sg
    J0 = -rho * np.einsum("...a,...ab,...bk,...k->...", s.v0, g, s.F, xi) * sg
    return NoetherCurrent(J0, flux[..., None] * xi)


def incompressible_current(model: MaterialModel, sample: JetSample, gen: SymmetryGenerator) -> NoetherCurrent:
    """Relabeling current with the multiplier pressure ``P = lam / sqrt G``.

    ``J^k = (rho |phidot|^2 / 2 - rho W - P_W J - P) sqrt(G) xi^k`` where
    ``P_W`` is the material pressure of a barotropic energy (zero for a
    constant energy).
    """
    kind = model.energy.kind
    if kind not in ("constant", "barotropic"):
        raise WrongEnergyKind("closed-form incompressible current needs a fluid energy")
    s = sample
    if s.lam is None:
        raise MissingMultiplier("incompressible current needs a multiplier")
    xi = gen.xi(s.x)
    sg = _sqrt_det(model.G, s.x)
    rho = model.density(s.x)
    g = model.g.checked(s.y)
    P = np.asarray(s.lam) / sg
    PW = material_pressure(model, s) * jacobian(model, s) if kind == "barotropic" else 0.0
    flux = (_kinetic(model, s) - rho * stored_energy(model, s) - PW - P) * sg
    J0 = -rho * np.einsum("...a,...ab,...bk,...k->...", s.v0, g, s.F, xi) * sg
    return NoetherCurrent(J0, flux[..., None] * xi)


def time_translation_current(model: MaterialModel, sample: JetSample, gen: SymmetryGenerator) -> NoetherCurrent:
    """``J^0 = -zeta e`` and ``J^j = zeta sqrt(G) (P_a^j - lam J (F^-1)^j_a / sqrt G) phidot^a``."""
    s = sample
    zeta = gen.zeta
    sg = _sqrt_det(model.G, s.x)
    rho = model.density(s.x)
    e = (_kinetic(model, s) + rho * stored_energy(model, s)) * sg
    flux = sg[..., None] * np.einsum("...aj,...a->...j", piola_kirchhoff(model, s), s.v0)
    if model.incompressible:
        lam = np.asarray(s.lam)
        J = jacobian(model, s, check=False)
        e = e - lam * (J - 1.0)
        flux = flux - (lam * J)[..., None] * np.einsum("...ja,...a->...j", sm.inv(s.F), s.v0)
    return NoetherCurrent(-zeta * e, zeta * flux)


def current_field(model, fld, grid, gen, level, closed_form=False) -> NoetherCurrent:
    s = jet_field(grid, fld, level)
    if not closed_form:
        return momentum_map(model, s, gen)
    if gen.kind == "time_translation":
        return time_translation_current(model, s, gen)
    if model.incompressible:
        return incompressible_current(model, s, gen)
    return barotropic_current(model, s, gen)


def _divergence(grid, prev, here, nxt):
    div = (nxt.J0 - prev.J0) / (2 * grid.dt)
    for k in range(grid.n_space):
        div = div + spatial_diff(grid, here.Jk[..., k], k)
    return div


def noether_divergence(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                       gen: SymmetryGenerator, level: int | None = None) -> np.ndarray:
    """Space-time divergence ``d_t J^0 + d_k J^k`` at non-boundary nodes."""
    level = _mid_level(fld, level)
    cur = [current_field(model, fld, grid, gen, k) for k in (level - 1, level, level + 1)]
    return _divergence(grid, *cur)[grid.interior()]


def energy_continuity_residual(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                               level: int | None = None) -> np.ndarray:
    """``d_t e - d_k(sqrt(G) P_a^k phidot^a)`` at non-boundary nodes."""
    if model.energy.kind not in ("barotropic", "elastic"):
        raise WrongEnergyKind("energy continuity needs a barotropic or elastic energy")
    level = _mid_level(fld, level)
    e = {}
    for k in (level - 1, level + 1):
        e[k] = energy_density(model, jet_field(grid, fld, k))
    s = jet_field(grid, fld, level)
    flux = _sqrt_det(model.G, s.x)[..., None] * np.einsum("...aj,...a->...j", piola_kirchhoff(model, s), s.v0)
    res = (e[level + 1] - e[level - 1]) / (2 * grid.dt)
    for k in range(grid.n_space):
        res = res - spatial_diff(grid, flux[..., k], k)
    return res[grid.interior()]


@dataclass
class NoetherCheck:
    """Gap between the current divergence and the contracted field equations."""

    gap: float
    divergence: float
    contraction: float


def noether_implies_el_check(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                             gen: SymmetryGenerator, level: int | None = None) -> NoetherCheck:
    """Compare ``d_mu J^mu`` with ``-sqrt(G) xi^nu v^a_nu R_a`` on an arbitrary section.

    ``R`` is the barotropic residual, or for incompressible models the full
    constrained residual including the ``J`` factor of the pressure force.
    The divergence of the incompressible current only carries the pressure
    force with ``J = 1``, so the gap there is ``sqrt(G) xi^k d_k P (J - 1)``.
    """
    level = _mid_level(fld, level)
    div = noether_divergence(model, fld, grid, gen, level)
    s = jet_field(grid, fld, level)
    if model.incompressible:
        R, _ = el_residual_constrained(model, ConstrainedState(fld, level), grid, level)
    elif model.energy.kind == "barotropic":
        R = el_residual_barotropic(model, fld, grid, level)
    else:
        raise WrongEnergyKind("the recovery check needs a barotropic or incompressible model")
    xi = gen.base(s.x)
    vxi = np.einsum("...an,...n->...a", s.v, xi)[grid.interior()]
    sg = _sqrt_det(model.G, s.x)[grid.interior()]
    contraction = -sg * np.einsum("...a,...a->...", vxi, R.values)
    gap = float(np.max(np.abs(div - contraction)))
    return NoetherCheck(gap, float(np.max(np.abs(div))), float(np.max(np.abs(contraction))))


def relabel_jet(sample: JetSample, A, b) -> JetSample:
    """Jet of ``phi o eta^-1`` at ``eta(x)`` for the affine relabeling ``eta(x) = A x + b``."""
    A = np.asarray(A, dtype=float)
    Ainv = sm.inv(A)
    x = np.einsum("ij,...j->...i", A, sample.x) + b
    v = sample.v.copy()
    v[..., 1:] = np.einsum("...aj,ji->...ai", sample.F, Ainv)
    beta = None
    if sample.beta is not None:
        beta = np.array(sample.beta, dtype=float, copy=True)
        beta[..., 1:] = np.einsum("...j,ji->...i", beta[..., 1:], Ainv)
    return JetSample(x, sample.t, sample.y, v, sample.lam, beta)


def equivariance_defect(model: MaterialModel, sample: JetSample, A, b) -> np.ndarray:
    """``|L(eta . gamma) det A - L(gamma)|`` for the augmented density when constrained."""
    moved = relabel_jet(sample, A, b)
    det = sm.det(np.asarray(A, dtype=float))
    return np.abs(total_lagrangian(model, moved) * det - total_lagrangian(model, sample))


def random_unimodular(rng: np.random.Generator, n: int, spread: float = 0.5) -> np.ndarray:
    """Random matrix with determinant one, well conditioned for small ``spread``."""
    while True:
        A = np.eye(n) + spread * rng.standard_normal((n, n))
        d = sm.det(A)
        if d > 0.2:
            return A / d ** (1.0 / n)
