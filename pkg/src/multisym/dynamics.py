"""Euler-Lagrange residuals on grids.

Every residual is evaluated at one time level of a
:class:`~multisym.fields.ConfigurationField` that has a level on each side.
Values are covectors in force-density units, reported at non-boundary nodes
with the sign convention

    rho g_ab (D_g phidot/Dt)^b - (forces)_a

so that all formulations are directly comparable.
:func:`el_residual_general` differentiates the Lagrangian density
numerically and serves as the independent oracle for the closed-form
residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import smallmat as sm
from .errors import MissingMultiplier, NonRegular, ShapeError, WrongEnergyKind
from .fields import (
    ConfigurationField,
    JetSample,
    SpaceTimeGrid,
    cell_average,
    cell_gradient,
    cell_to_node_gradient,
    jet_field,
    second_time_diff,
    spatial_diff,
)
from .geometry import christoffel, covariant_accel
from .material import (
    MaterialModel,
    jacobian,
    lagrangian_density,
    material_pressure,
    piola_kirchhoff,
    total_lagrangian,
)

__all__ = [
    "ELResidual",
    "ConstrainedState",
    "slot_gradient",
    "el_residual_general",
    "el_residual_continuum",
    "el_residual_barotropic",
    "el_residual_elastic",
    "induced_constraint",
    "cell_jets",
    "augmented_lagrangian",
    "el_residual_constrained",
    "pressure_decomposition",
    "eulerian_fields",
    "pressure_poisson_residual",
]

SLOT_STEP = 1e-3


@dataclass
class ELResidual:
    """Residual covectors at the non-boundary nodes, shape ``(*interior, N)``."""

    values: np.ndarray

    @property
    def worst(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class ConstrainedState:
    """Configuration with populated multipliers, inspected at ``level``."""

    field: ConfigurationField
    level: int = -1

    def __post_init__(self):
        if self.field.lam is None:
            raise MissingMultiplier("constrained state needs cell multipliers")

    @property
    def lam(self) -> np.ndarray:
        return self.field.lam[self.level]

    def pressure(self, grid: SpaceTimeGrid, model: MaterialModel) -> np.ndarray:
        """Cell pressure ``P = lam / sqrt(det G)``."""
        sg = np.sqrt(sm.det(model.G.checked(grid.cell_centers())))
        return self.lam / sg


def slot_gradient(fun, arr, n_trailing: int = 1, step: float = SLOT_STEP) -> np.ndarray:
    """Fourth-order central-difference gradient of a batched scalar function.

    ``fun`` maps an array shaped like ``arr`` to the batch shape; the last
    ``n_trailing`` axes of ``arr`` are differentiated component by component.
    """
    return _slot_grad(fun, arr, n_trailing, step)


def _slot_grad(fun, arr, n_trailing: int, step: float = SLOT_STEP) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    trailing = arr.shape[arr.ndim - n_trailing:]
    out = np.empty_like(arr)
    for comp in np.ndindex(*trailing):
        e = np.zeros(trailing)
        e[comp] = step
        vals = [fun(arr + c * e) for c in (2, 1, -1, -2)]
        out[(Ellipsis,) + comp] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return out


def _mid_level(fld: ConfigurationField, level):
    L = fld.n_levels
    if L < 3:
        raise ShapeError("residuals need at least 3 time levels")
    if level is None:
        level = L // 2
    if level < 0:
        level += L
    if not 0 < level < L - 1:
        raise IndexError("residual level needs a neighbouring level on each side")
    return level


def _sqrt_det(metric, x):
    return np.sqrt(sm.det(metric.checked(x)))


def _interior(grid, arr):
    return arr[grid.interior()]


def el_residual_general(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                        level: int | None = None, step: float = SLOT_STEP) -> ELResidual:
    """``-(dL/dy - d_mu dL/dv_mu) / sqrt(det G)`` by numerical slot derivatives.

    Uses the augmented Lagrangian when the model is incompressible.
    """
    level = _mid_level(fld, level)
    jets = {k: jet_field(grid, fld, k) for k in (level - 1, level, level + 1)}
    s = jets[level]

    dLdy = _slot_grad(lambda y: total_lagrangian(model, s.replace(y=y)), s.y, 1, step)

    def dLdv(jet):
        return _slot_grad(lambda v: total_lagrangian(model, jet.replace(v=v)), jet.v, 2, step)

    p_prev = dLdv(jets[level - 1])[..., 0]
    p_next = dLdv(jets[level + 1])[..., 0]
    p_here = dLdv(s)
    div = (p_next - p_prev) / (2 * grid.dt)
    for k in range(grid.n_space):
        div = div + spatial_diff(grid, p_here[..., k + 1], k)
    res = -(dLdy - div) / _sqrt_det(model.G, s.x)[..., None]
    return ELResidual(_interior(grid, res))


def _inertial(model, fld, grid, level, s):
    acc = second_time_diff(fld.phi, grid.dt, level)
    cov = covariant_accel(model.g, s.y, s.v0, acc)
    g = model.g.checked(s.y)
    rho = model.density(s.x)
    return rho[..., None] * np.einsum("...ab,...b->...a", g, cov)


def _stress_divergence(model, grid, s):
    """``(1/sqrt G) d_k (rho sqrt G dW/dv_k) - rho dW/dg_bc d_a g_bc``."""
    from .material import dW_dF, dW_dg

    rho = model.density(s.x)
    sg = _sqrt_det(model.G, s.x)
    Q = (rho * sg)[..., None, None] * dW_dF(model, s)
    div = np.zeros(s.y.shape)
    for k in range(grid.n_space):
        div = div + spatial_diff(grid, Q[..., k], k)
    div = div / sg[..., None]
    if not model.g.constant:
        dg = model.g.deriv(s.y)
        div = div - rho[..., None] * np.einsum("...bc,...abc->...a", dW_dg(model, s), dg)
    return div


def el_residual_continuum(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                          level: int | None = None) -> ELResidual:
    """Continuum form assembled from geometry and material primitives."""
    level = _mid_level(fld, level)
    s = jet_field(grid, fld, level)
    res = _inertial(model, fld, grid, level, s) - _stress_divergence(model, grid, s)
    return ELResidual(_interior(grid, res))


def _pressure_force(grid, s, J, dP):
    """``d_k P J (F^-1)^k_a`` from nodal pressure gradients ``dP[..., k]``."""
    finv = sm.inv(s.F)
    return J[..., None] * np.einsum("...k,...ka->...a", dP, finv)


def el_residual_barotropic(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                           level: int | None = None) -> ELResidual:
    """``rho g (D_g phidot/Dt) + d_k P J (F^-1)^k_a`` with the material pressure."""
    if model.energy.kind != "barotropic":
        raise WrongEnergyKind("barotropic residual needs a barotropic energy")
    level = _mid_level(fld, level)
    s = jet_field(grid, fld, level)
    P = material_pressure(model, s)
    J = jacobian(model, s)
    dP = np.stack([spatial_diff(grid, P, k) for k in range(grid.n_space)], axis=-1)
    res = _inertial(model, fld, grid, level, s) + _pressure_force(grid, s, J, dP)
    return ELResidual(_interior(grid, res))


def covariant_divergence(model: MaterialModel, grid: SpaceTimeGrid, s: JetSample) -> np.ndarray:
    """``d_i P_a^i + P_a^j Gamma^k_jk - P_b^i gamma^b_ac F^c_i`` at every node."""
    P = piola_kirchhoff(model, s)
    div = np.zeros(s.y.shape)
    for i in range(grid.n_space):
        div = div + spatial_diff(grid, P[..., i], i)
    if not model.G.constant:
        Gam = christoffel(model.G, s.x)
        div = div + np.einsum("...aj,...kjk->...a", P, Gam)
    if not model.g.constant:
        gam = christoffel(model.g, s.y)
        div = div - np.einsum("...bi,...bac,...ci->...a", P, gam, s.F)
    return div


def el_residual_elastic(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
                        level: int | None = None) -> ELResidual:
    """``rho g (D_g V/Dt) - DIV P`` for energies of the Green tensor."""
    if model.energy.kind != "elastic":
        raise WrongEnergyKind("elastic residual needs a Green-tensor energy")
    level = _mid_level(fld, level)
    s = jet_field(grid, fld, level)
    res = _inertial(model, fld, grid, level, s) - covariant_divergence(model, grid, s)
    return ELResidual(_interior(grid, res))


def cell_jets(grid: SpaceTimeGrid, fld: ConfigurationField, level: int) -> JetSample:
    """Cell-centered jets: cell-averaged gradient, corner-averaged position.

    The time column is zero; only the spatial block is meaningful.
    """
    phi = fld.phi[level]
    F = cell_gradient(grid, phi, fld.lift)
    y = cell_average(grid, phi, fld.lift)
    v = np.concatenate([np.zeros(F.shape[:-1] + (1,)), F], axis=-1)
    lam = None if fld.lam is None else fld.lam[level]
    return JetSample(grid.cell_centers(), fld.time(level, grid), y, v, lam)


def induced_constraint(fld: ConfigurationField, grid: SpaceTimeGrid, model: MaterialModel,
                       level: int = -1) -> np.ndarray:
    """``J - 1`` per cell from the cell-averaged jet."""
    if level < 0:
        level += fld.n_levels
    return jacobian(model, cell_jets(grid, fld, level)) - 1.0


def augmented_lagrangian(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``L + lam (J - 1)``."""
    if sample.lam is None:
        raise MissingMultiplier("augmented Lagrangian needs a multiplier")
    return lagrangian_density(model, sample) + sample.lam * (jacobian(model, sample, check=False) - 1.0)


def el_residual_constrained(model: MaterialModel, state: ConstrainedState, grid: SpaceTimeGrid,
                            level: int | None = None):
    """Continuum residual plus the multiplier force, and the cell constraint.

    Returns ``(ELResidual, constraint)``; the pressure force is
    ``d_k P (F^-1)^k_a J`` with ``P = lam / sqrt(det G)`` held on cells.
    """
    fld = state.field
    level = _mid_level(fld, level)
    s = jet_field(grid, fld, level)
    J = jacobian(model, s)
    P = ConstrainedState(fld, level).pressure(grid, model)
    dP = cell_to_node_gradient(grid, P)
    res = (_inertial(model, fld, grid, level, s) - _stress_divergence(model, grid, s)
           + _pressure_force(grid, s, J, dP))
    return ELResidual(_interior(grid, res)), induced_constraint(fld, grid, model, level)


def pressure_decomposition(model: MaterialModel, state: ConstrainedState, grid: SpaceTimeGrid):
    """Cell pressures ``(P_W, P_lambda)`` with ``P_W = -rho w'(J)`` and ``P_lambda = lam / sqrt G``.

    Both live on cells so that ``P_W + P_lambda`` is the total pressure.
    """
    kind = model.energy.kind
    cj = cell_jets(grid, state.field, state.level if state.level >= 0 else state.field.n_levels + state.level)
    if kind == "constant":
        P_W = np.zeros(grid.cell_shape)
    elif kind == "barotropic":
        P_W = material_pressure(model, cj)
    else:
        raise WrongEnergyKind("pressure decomposition needs a constant or barotropic energy")
    return P_W, state.pressure(grid, model)


def _periodic_spline(grid, values, x, offset, order=3):
    """Periodic cubic-spline interpolation of a lattice shifted by ``offset``."""
    lo = np.array([a for a, _ in grid.extents])
    coords = ((x - lo) / grid.spacing - offset).T
    values = np.asarray(values, dtype=float)
    n = grid.n_space
    if values.ndim == n:
        return ndimage.map_coordinates(values, coords, order=order, mode="grid-wrap")
    comps = values.reshape(values.shape[:n] + (-1,))
    out = [ndimage.map_coordinates(comps[..., j], coords, order=order, mode="grid-wrap")
           for j in range(comps.shape[-1])]
    return np.stack(out, axis=-1).reshape(x.shape[:-1] + values.shape[n:])


INVERSION_TOL = 1e-13
INVERSION_ITERS = 50


def _wrap_box(x, L):
    # np.mod can round up to exactly L, which the periodic tree rejects
    x = np.mod(x, L)
    return np.where(x >= L, x - L, x)


def invert_section(grid: SpaceTimeGrid, phi, F, lift, targets):
    """Reference points ``x`` with ``phi(x) = targets`` on a periodic grid.

    Starts from the nearest node and one Newton correction with its
    deformation gradient, then repeats that correction on the spline
    interpolant of the displacement until it stalls below ``1e-13``.
    """
    n = grid.n_space
    L = grid.lengths
    lo = np.array([a for a, _ in grid.extents])
    X = grid.coords().reshape(-1, n)
    pos = _wrap_box(phi.reshape(-1, n) - lo, L)
    tree = cKDTree(pos, boxsize=L)
    t = _wrap_box(np.asarray(targets, dtype=float).reshape(-1, n) - lo, L)
    _, idx = tree.query(t)
    finv = sm.inv(F.reshape(-1, n, n)[idx])

    def wrap(d):
        return d - L * np.round(d / L)

    x = X[idx] + np.einsum("pij,pj->pi", finv, wrap(t - pos[idx]))
    disp = phi - grid.coords() - _lift_ramp(grid, lift)
    for _ in range(INVERSION_ITERS):
        y = x + _periodic_spline(grid, disp, x, 0.0) + _lift_ramp_at(grid, lift, x)
        corr = np.einsum("pij,pj->pi", finv, wrap(t + lo - y))
        x = x + corr
        if np.max(np.abs(corr)) < INVERSION_TOL * max(1.0, float(np.max(L))):
            break
    return x


def _lift_ramp(grid, lift):
    """Part of the identity-like section that is not periodic: zero for torus lifts."""
    return np.einsum("...k,ka->...a", grid.coords() - np.array([a for a, _ in grid.extents]),
                     (lift / grid.lengths[:, None]) - np.eye(grid.n_space, lift.shape[1]))


def _lift_ramp_at(grid, lift, x):
    lo = np.array([a for a, _ in grid.extents])
    return np.einsum("...k,ka->...a", x - lo, (lift / grid.lengths[:, None]) - np.eye(grid.n_space, lift.shape[1]))


def eulerian_fields(state: ConstrainedState, grid: SpaceTimeGrid, model: MaterialModel):
    """Spatial velocity ``u = V o phi^-1`` and pressure ``p = P o phi^-1`` on the grid nodes."""
    if not all(grid.periodic(k) for k in range(grid.n_space)):
        raise ShapeError("Eulerian resampling is implemented for fully periodic grids")
    if not (model.g.constant and model.G.constant):
        raise ShapeError("Eulerian resampling assumes flat metrics")
    fld = state.field
    level = _mid_level(fld, None if state.level == -1 else state.level)
    s = jet_field(grid, fld, level)
    if np.any(sm.det(s.F) <= 0):
        raise NonRegular("section is not invertible on the grid")
    x = invert_section(grid, s.y, s.F, fld.lift, grid.coords())
    u = _periodic_spline(grid, s.v0, x, 0.0).reshape(grid.nodes + (fld.N,))
    P = ConstrainedState(fld, level).pressure(grid, model)
    p = _periodic_spline(grid, P, x, 0.5).reshape(grid.nodes)
    return u, p


def pressure_poisson_residual(state: ConstrainedState, grid: SpaceTimeGrid, model: MaterialModel) -> np.ndarray:
    """``Laplacian p + div((u . grad) u)`` on the Eulerian grid (flat, periodic)."""
    u, p = eulerian_fields(state, grid, model)
    return poisson_defect(grid, u, p)


def poisson_defect(grid: SpaceTimeGrid, u, p) -> np.ndarray:
    n = grid.n_space
    lap = np.zeros(p.shape)
    for k in range(n):
        h = grid.spacing[k]
        lap += (np.roll(p, -1, k) - 2 * p + np.roll(p, 1, k)) / h ** 2
    grads = np.stack([spatial_diff(grid, u, k) for k in range(n)], axis=-1)  # [..., a, k] = d_k u^a
    adv = np.einsum("...k,...ak->...a", u, grads)
    div = np.zeros(p.shape)
    for k in range(n):
        div += spatial_diff(grid, adv[..., k], k)
    return lap + div
