"""Variational space-time integrator on rectangular grids.

The discrete action is a sum of space-time cell Lagrangians.  Positions are
nodal; each spatial cell uses the mean of its edge differences as its
deformation gradient, and kinetic energy is lumped to the cell corners::

    L_d(cell, k) = dt * [ sum_q (m_c / 2^n) |phi_q^{k+1} - phi_q^k|_g^2 / (2 dt^2)
                          - (potential quadrature over t_k, t_{k+1}) ]

with ``m_c = |cell| sqrt(det G) rho`` and the potential ``m_c W(F_c)``.
The trapezoid rule in time gives an explicit two-step scheme (one Newton
iteration); the midpoint rule is implicit.  Incompressible runs add
``dt |cell| lam_c (J_c - 1)`` per cell and solve a saddle system for the
next level and the cell multipliers.

The fiber metric ``g`` must be constant; the base metric may vary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import smallmat as sm
from .errors import ConfigError, NewtonDiverged, NonRegular, ShapeError, SingularSaddle
from .fields import ConfigurationField, SpaceTimeGrid, cell_gradient, corner_offsets
from .material import MaterialModel

log = logging.getLogger(__name__)

__all__ = [
    "DiscreteLagrangianConfig",
    "SolverSettings",
    "CellAssembly",
    "StepInfo",
    "Trajectory",
    "discrete_lagrangian",
    "initialize",
    "step",
    "run",
    "discrete_energy",
    "discrete_momentum",
    "rk4_reference",
    "linearized_solutions",
    "multisymplectic_defect",
]

QUADRATURES = ("trapezoid", "midpoint")
LINEAR_SOLVERS = ("sparse_lu", "dense_lu", "conjugate_gradient")


@dataclass(frozen=True)
class DiscreteLagrangianConfig:
    """Quadrature of the potential over one space-time cell.

    ``trapezoid`` averages the two time levels, ``midpoint`` evaluates at the
    time midpoint.  Both use the cell midpoint in space.
    """

    quadrature: str = "trapezoid"

    def __post_init__(self):
        if self.quadrature not in QUADRATURES:
            raise ConfigError(f"quadrature must be one of {QUADRATURES}")

    def time_weights(self) -> tuple:
        """Weights of the (start, end) time levels; they sum to one."""
        return (0.5, 0.5)


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = 1e-10
    max_iter: int = 50
    linear_solver: str = "sparse_lu"
    cg_tol: float = 1e-13

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ConfigError("newton_tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ConfigError(f"linear_solver must be one of {LINEAR_SOLVERS}")
        if not self.cg_tol > 0:
            raise ConfigError("cg_tol must be positive")


def discrete_lagrangian(model: MaterialModel, cell_values, spacing, dt: float,
                        config: DiscreteLagrangianConfig = DiscreteLagrangianConfig(),
                        x_center=None) -> float:
    """Discrete Lagrangian of one space-time cell.

    Parameters
    ----------
    cell_values : array, shape (2, 2**n, N)
        Corner positions at the start and end time level, corners ordered as
        :func:`~multisym.fields.corner_offsets`.
    spacing : sequence of float
        Spatial cell edge lengths.
    x_center : array, optional
        Cell center, used for ``rho``, ``G``; defaults to the origin.
    """
    vals = np.asarray(cell_values, dtype=float)
    h = np.asarray(spacing, dtype=float)
    n = h.size
    if vals.ndim != 3 or vals.shape[:2] != (2, 2 ** n):
        raise ShapeError("cell_values must have shape (2, 2**n, N)")
    N = vals.shape[-1]
    x = np.zeros(n) if x_center is None else np.asarray(x_center, dtype=float)
    w = _corner_weights(n, h)
    G = model.G.checked(x)
    g = model.g.checked(np.mean(vals, axis=(0, 1)))
    rho = model.density(x)
    mc = np.prod(h) * np.sqrt(sm.det(G)) * rho

    def pot(corners):
        F = np.einsum("qa,qk->ak", corners, w)
        if sm.det(F) <= 0 if N == n else False:
            raise NonRegular("degenerate cell")
        return mc * model.energy.W(F, g, G, rho)

    d = vals[1] - vals[0]
    kin = 0.5 * mc / 2 ** n * np.einsum("qa,ab,qb->", d, g, d) / dt ** 2
    if config.quadrature == "trapezoid":
        V = 0.5 * (pot(vals[0]) + pot(vals[1]))
    else:
        V = pot(0.5 * (vals[0] + vals[1]))
    return float(dt * (kin - V))


def _corner_weights(n, h):
    offs = np.array(corner_offsets(n))
    return np.where(offs == 1, 1.0, -1.0) / (2 ** (n - 1) * np.asarray(h, dtype=float))


class CellAssembly:
    """Cell-to-node incidence and the sparse operators built on it.

    Node arrays are flattened to ``(n_nodes * N,)`` in C order.
    """

    def __init__(self, model: MaterialModel, grid: SpaceTimeGrid, N: int, lift=None):
        if not model.g.constant:
            raise ConfigError("the integrator needs a constant fiber metric")
        self.model = model
        self.grid = grid
        self.N = N
        n = grid.n_space
        self.lift = np.zeros((n, N)) if lift is None else np.asarray(lift, dtype=float)
        cells = grid.cell_shape
        offs = np.array(corner_offsets(n))
        self.Q = len(offs)
        cidx = np.indices(cells).reshape(n, -1).T
        nodes = cidx[:, None, :] + offs[None]
        for k in range(n):
            if grid.periodic(k):
                nodes[..., k] %= grid.nodes[k]
        self.conn = np.ravel_multi_index(tuple(np.moveaxis(nodes, -1, 0)), grid.nodes)
        self.C = self.conn.shape[0]
        self.n_nodes = int(np.prod(grid.nodes))
        self.w = _corner_weights(n, grid.spacing)
        xc = grid.cell_centers().reshape(-1, n)
        self.Gc = model.G.checked(xc)
        self.rho_c = model.density(xc)
        self.vol = np.full(self.C, grid.cell_volume)
        self.a = self.vol * np.sqrt(sm.det(self.Gc)) * self.rho_c
        self.g = model.g.checked(np.zeros(N))
        self.ginv = sm.inv(self.g)
        self.gc = np.broadcast_to(self.g, (self.C, N, N))
        self.ratio = np.sqrt(sm.det(self.g) / sm.det(self.Gc))
        self.mass = np.bincount(self.conn.ravel(), weights=np.repeat(self.a / self.Q, self.Q),
                                minlength=self.n_nodes)
        free_nodes = grid.free_mask().ravel()
        self.free = np.repeat(free_nodes, N)
        self.free_idx = np.flatnonzero(self.free)
        dof = self.conn[:, :, None] * N + np.arange(N)
        self.dof = dof  # (C, Q, N)
        r = np.broadcast_to(dof[:, :, :, None, None], (self.C, self.Q, N, self.Q, N))
        c = np.broadcast_to(dof[:, None, None, :, :], (self.C, self.Q, N, self.Q, N))
        self._hrows = r.ravel()
        self._hcols = c.ravel()
        self._jrows = np.repeat(np.arange(self.C), self.Q * N)
        self._jcols = dof.reshape(self.C, -1).ravel()
        mdiag = np.repeat(self.mass, N)
        if np.allclose(self.g, np.diag(np.diag(self.g))):
            mdiag = mdiag * np.tile(np.diag(self.g), self.n_nodes)
            self.M = sp.diags(mdiag).tocsr()
        else:
            self.M = sp.kron(sp.diags(self.mass), sp.csr_matrix(self.g)).tocsr()
        self.M_free = self.M[self.free_idx][:, self.free_idx].tocsc()

    # per-cell kinematics
    def F(self, phi) -> np.ndarray:
        return cell_gradient(self.grid, phi, self.lift).reshape(self.C, self.N, self.grid.n_space)

    def J(self, phi, F=None) -> np.ndarray:
        F = self.F(phi) if F is None else F
        return sm.det(F) * self.ratio

    def _check(self, F):
        if F.shape[-1] == F.shape[-2] and np.any(sm.det(F) <= 0):
            raise NonRegular("a cell has non-positive Jacobian")

    def potential(self, phi) -> float:
        F = self.F(phi)
        self._check(F)
        return float(np.sum(self.a * self.model.energy.W(F, self.gc, self.Gc, self.rho_c)))

    def gradient(self, phi) -> np.ndarray:
        """``dV/dphi`` as a flat nodal array."""
        F = self.F(phi)
        self._check(F)
        dF = self.model.energy.dF(F, self.gc, self.Gc, self.rho_c)
        contrib = self.a[:, None, None] * np.einsum("cak,qk->cqa", dF, self.w)
        return np.bincount(self.dof.ravel(), weights=contrib.ravel(), minlength=self.n_nodes * self.N)

    def element_hessians(self, phi) -> np.ndarray:
        """Potential Hessian per cell, shape ``(C, Q, N, Q, N)``."""
        F = self.F(phi)
        dFF = self.model.energy.dFF(F, self.gc, self.Gc, self.rho_c)
        return self.a[:, None, None, None, None] * np.einsum("qk,cakbl,rl->cqarb", self.w, dFF, self.w)

    def hessian(self, phi) -> sp.csr_matrix:
        H = self.element_hessians(phi)
        size = self.n_nodes * self.N
        return sp.csr_matrix((H.ravel(), (self._hrows, self._hcols)), shape=(size, size))

    def constraint_jacobian(self, phi) -> sp.csr_matrix:
        """``dJ_c/dphi``, shape ``(C, n_nodes * N)``."""
        F = self.F(phi)
        J = sm.det(F) * self.ratio
        cof = J[:, None, None] * np.swapaxes(sm.inv(F), -1, -2)
        vals = np.einsum("cak,qk->cqa", cof, self.w)
        return sp.csr_matrix((vals.ravel(), (self._jrows, self._jcols)),
                             shape=(self.C, self.n_nodes * self.N))

    def minv(self, force) -> np.ndarray:
        """Apply the inverse lumped mass to a flat nodal covector."""
        f = force.reshape(self.n_nodes, self.N) / self.mass[:, None]
        return (f @ self.ginv.T).ravel()


@dataclass
class StepInfo:
    iterations: int
    residual: float
    constraint: float | None = None


def _lu_solve(A, b, settings):
    if settings.linear_solver == "dense_lu":
        try:
            lu = scipy.linalg.lu_factor(A.toarray() if sp.issparse(A) else A, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SingularSaddle(str(exc)) from exc
        x = scipy.linalg.lu_solve(lu, b)
    else:
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                x = spla.spsolve(sp.csc_matrix(A), b)
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise SingularSaddle(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSaddle("linear solve produced non-finite values")
    return x


def _cg_solve(A, b, settings, gauge=None, ref=None):
    """CG to ``cg_tol`` relative to the first right-hand side seen through ``ref``.

    Later Newton corrections are mostly roundoff along near-null multiplier
    modes (the cell checkerboard), so they only need to reach that floor.
    """
    if gauge is not None:
        b = b - gauge * (gauge @ b) / (gauge @ gauge)
    ref = {} if ref is None else ref
    floor = settings.cg_tol * ref.setdefault("norm", float(np.linalg.norm(b)))
    x, info = spla.cg(A, b, rtol=settings.cg_tol, atol=floor, maxiter=10 * A.shape[0])
    if info != 0 or not np.all(np.isfinite(x)):
        raise SingularSaddle(f"conjugate gradient did not converge (info={info})")
    return x


def _newton(asm: CellAssembly, settings: SolverSettings, cur, target, x0, *,
            implicit: Callable | None = None, constrained=False, B_ref=None, step_index=None):
    """Solve ``M (x - target) / dt^2 + f(x) - B_ref^T (vol lam) = 0`` with ``J(x) = 1``.

    ``implicit(x)`` returns ``(f, df)`` for the midpoint rule.  Dirichlet
    nodes keep their values from ``cur``.
    """
    dt2 = asm.grid.dt ** 2
    fr = asm.free_idx
    x = x0.ravel().copy()
    x[~asm.free] = cur.ravel()[~asm.free]
    tgt = target.ravel()
    C = asm.C
    lam = np.zeros(C)
    Bt_free = None
    if constrained:
        Bt_free = (B_ref[:, fr].T @ sp.diags(asm.vol)).tocsr()
    shape = cur.shape
    it = 0
    res = np.inf
    cres = None
    Kdiag = asm.M_free.diagonal() / dt2 if implicit is None and _is_diag(asm.M_free) else None
    cg_ref = {}
    while True:
        R = (asm.M @ (x - tgt)) / dt2
        Kf = None
        if implicit is not None:
            f, df = implicit(x.reshape(shape))
            R = R + f
            Kf = df[fr][:, fr]
        R = R[fr]
        if constrained:
            R = R - Bt_free @ lam
            Bn = asm.constraint_jacobian(x.reshape(shape))
            c = asm.J(x.reshape(shape)) - 1.0
            cres = float(np.max(np.abs(c)))
        res = float(np.max(np.abs(dt2 * asm.minv(_embed(asm, R))))) if R.size else 0.0
        done = res <= settings.newton_tol and (cres is None or cres <= settings.newton_tol)
        if done and it >= 1:
            break
        if it >= settings.max_iter:
            raise NewtonDiverged(f"Newton did not converge in {settings.max_iter} iterations "
                                 f"(residual {res:.3e}, constraint {cres})", step=step_index,
                                 residual=max(res, cres or 0.0))
        K = asm.M_free / dt2 if Kf is None else (asm.M_free / dt2 + Kf).tocsc()
        if not constrained:
            if Kdiag is not None:
                dx = -R / Kdiag
            elif settings.linear_solver == "conjugate_gradient":
                dx = _cg_solve(K, -R, settings, ref=cg_ref)
            else:
                dx = _lu_solve(K, -R, settings)
        else:
            dx, dlam = _saddle(asm, settings, K, Kdiag, Bt_free, Bn[:, fr], R, c, cg_ref)
            lam = lam + dlam
        x[fr] += dx
        it += 1
        if not np.all(np.isfinite(x)):
            raise NewtonDiverged("Newton produced non-finite positions", step=step_index, residual=np.inf)
    out = x.reshape(shape)
    asm._check(asm.F(out))
    return out, (lam if constrained else None), StepInfo(it, res, cres)


def _is_diag(A):
    return A.nnz == np.count_nonzero(A.diagonal())


def _embed(asm, vals_free):
    out = np.zeros(asm.n_nodes * asm.N)
    out[asm.free_idx] = vals_free
    return out


def _needs_gauge(asm, Bn):
    s = asm.vol @ Bn
    scale = np.max(np.abs(Bn.data)) if Bn.nnz else 1.0
    return np.max(np.abs(s)) <= 1e-9 * scale * np.sum(asm.vol)


def _saddle(asm, settings, K, Kdiag, Bt, Bn, R, c, cg_ref=None):
    """Newton correction of the bordered saddle system.

    ``[[K, -Bt], [Bn, 0]] [dx, dlam] = [-R, -c]`` with the multiplier mean
    fixed by a border row when the constraint rows are dependent.
    """
    C = asm.C
    gauge = _needs_gauge(asm, Bn)
    if Kdiag is not None:
        # Schur complement on the multipliers
        Kinv = sp.diags(1.0 / Kdiag)
        S = (Bn @ Kinv @ Bt).tocsr()
        rhs = -c + Bn @ (R / Kdiag)
        if settings.linear_solver == "conjugate_gradient":
            # symmetric chord: reference Jacobian on both sides, in volume-weighted multipliers
            Ssym = (Bt.T @ Kinv @ Bt).tocsr()
            dlam = _cg_solve(Ssym, asm.vol * rhs, settings, np.ones(C) if gauge else None, cg_ref)
        elif gauge:
            A = sp.bmat([[S, asm.vol[:, None]], [asm.vol[None, :], None]], format="csc")
            dlam = _lu_solve(A, np.concatenate([rhs, [0.0]]), settings)[:C]
        else:
            dlam = _lu_solve(S, rhs, settings)
        dx = (-R + Bt @ dlam) / Kdiag
        return dx, dlam
    if settings.linear_solver == "conjugate_gradient":
        raise ConfigError("conjugate_gradient is not available for the implicit constrained saddle system")
    blocks = [[K, -Bt], [Bn, None]]
    rhs = [-R, -c]
    if gauge:
        blocks = [[K, -Bt, None], [Bn, None, asm.vol[:, None]], [None, asm.vol[None, :], None]]
        rhs.append([0.0])
    A = sp.bmat(blocks, format="csc")
    sol = _lu_solve(A, np.concatenate(rhs), settings)
    n = R.size
    return sol[:n], sol[n:n + C]


def _implicit_midpoint(asm, cur):
    def fun(x):
        mid = 0.5 * (cur + x)
        return 0.5 * asm.gradient(mid), 0.25 * asm.hessian(mid)
    return fun


def _step_levels(asm, config, settings, prev, cur, constrained, step_index=None):
    dt2 = asm.grid.dt ** 2
    guess = 2.0 * cur - prev
    B_ref = asm.constraint_jacobian(cur) if constrained else None
    if config.quadrature == "trapezoid":
        target = guess - dt2 * asm.minv(asm.gradient(cur)).reshape(cur.shape)
        implicit = None
    else:
        target = guess - dt2 * asm.minv(0.5 * asm.gradient(0.5 * (prev + cur))).reshape(cur.shape)
        implicit = _implicit_midpoint(asm, cur)
    return _newton(asm, settings, cur, target, guess, implicit=implicit,
                   constrained=constrained, B_ref=B_ref, step_index=step_index)


def step(model: MaterialModel, fld: ConfigurationField, grid: SpaceTimeGrid,
         settings: SolverSettings = SolverSettings(), constrained: bool = False,
         config: DiscreteLagrangianConfig = DiscreteLagrangianConfig(),
         assembly: CellAssembly | None = None, window: int | None = None):
    """Advance by one level; returns ``(field, StepInfo)``.

    In constrained mode the multipliers solved at the current level are
    stored there and copied to the new level.
    """
    fld.check(grid)
    if fld.n_levels < 2:
        raise ShapeError("step needs two committed levels")
    asm = assembly or CellAssembly(model, grid, fld.N, fld.lift)
    nxt, lam, info = _step_levels(asm, config, settings, fld.phi[-2], fld.phi[-1], constrained,
                                  step_index=fld.n_levels - 1)
    if constrained:
        lam = lam.reshape(grid.cell_shape)
        lam_all = (np.full((fld.n_levels,) + grid.cell_shape, np.nan) if fld.lam is None else fld.lam.copy())
        lam_all[-1] = lam
        fld = ConfigurationField(fld.phi, lam_all, fld.lift, fld.t0, fld.meta)
    return fld.push(nxt, lam if constrained else None, window=window, dt=grid.dt), info


def initialize(model: MaterialModel, grid: SpaceTimeGrid, phi0, V0, lift=None,
               settings: SolverSettings = SolverSettings(), constrained: bool = False,
               seed_order: int = 2, assembly: CellAssembly | None = None) -> ConfigurationField:
    """Two-level start from positions and velocities.

    ``phi1 = phi0 + dt V0`` (plus ``-dt^2/2 M^-1 dV/dphi`` when
    ``seed_order`` is 2), then projected onto ``J = 1`` in constrained mode.
    """
    phi0 = np.asarray(phi0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    if phi0.shape != V0.shape or phi0.shape[:-1] != grid.nodes:
        raise ShapeError("phi0 and V0 must have shape (*nodes, N)")
    asm = assembly or CellAssembly(model, grid, phi0.shape[-1], lift)
    dt = grid.dt
    phi1 = phi0 + dt * V0
    if seed_order == 2:
        phi1 = phi1 - 0.5 * dt ** 2 * asm.minv(asm.gradient(phi0)).reshape(phi0.shape)
    elif seed_order != 1:
        raise ConfigError("seed_order must be 1 or 2")
    phi1 = np.where(grid.free_mask()[..., None], phi1, phi0)
    lam = None
    if constrained:
        phi1, _, _ = _newton(asm, settings, phi0, phi1, phi1, constrained=True,
                             B_ref=asm.constraint_jacobian(phi0), step_index=0)
        lam = np.full((2,) + grid.cell_shape, np.nan)
    return ConfigurationField(np.stack([phi0, phi1]), lam, lift)


@dataclass
class Trajectory:
    """Accepted levels of a run with per-step solver records and diagnostics."""

    grid: SpaceTimeGrid
    field: ConfigurationField
    steps: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.field.n_levels


def run(model: MaterialModel, initial: ConfigurationField, grid: SpaceTimeGrid,
        settings: SolverSettings = SolverSettings(), n_steps: int = 0, *,
        constrained: bool = False, config: DiscreteLagrangianConfig = DiscreteLagrangianConfig(),
        hooks: dict | None = None, cadence: int = 1) -> Trajectory:
    """Advance ``n_steps`` levels from a two-level start.

    ``hooks`` maps names to callables ``hook(fld, level)`` evaluated every
    ``cadence`` steps on the newest level that has both neighbours; results
    are collected as ``(level, value)`` pairs.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    initial.check(grid)
    if initial.n_levels != 2:
        raise ShapeError("run starts from exactly two levels")
    asm = CellAssembly(model, grid, initial.N, initial.lift)
    total = 2 + n_steps
    phi = np.empty((total,) + initial.phi.shape[1:])
    phi[:2] = initial.phi
    lam = np.full((total,) + grid.cell_shape, np.nan) if constrained else None
    traj = Trajectory(grid, ConfigurationField(phi[:2], None if lam is None else lam[:2], initial.lift, initial.t0))
    hooks = hooks or {}
    traj.diagnostics = {name: [] for name in hooks}
    for k in range(1, n_steps + 1):
        nxt, lk, info = _step_levels(asm, config, settings, phi[k - 1], phi[k], constrained, step_index=k)
        phi[k + 1] = nxt
        if constrained:
            lam[k] = lk.reshape(grid.cell_shape)
            lam[k + 1] = lam[k]
            if k == 1:
                lam[0] = lam[1]
        traj.steps.append(info)
        if hooks and k % cadence == 0:
            view = ConfigurationField(phi[:k + 2], None if lam is None else lam[:k + 2], initial.lift, initial.t0)
            for name, fn in hooks.items():
                traj.diagnostics[name].append((k, fn(view, k)))
    traj.field = ConfigurationField(phi, lam, initial.lift, initial.t0)
    return traj


def discrete_energy(asm: CellAssembly, phi) -> np.ndarray:
    """``1/2 |(phi^{k+1} - phi^{k-1}) / 2dt|_M^2 + V(phi^k)`` at levels ``1 .. L-2``."""
    phi = np.asarray(phi)
    dt = asm.grid.dt
    out = []
    for k in range(1, phi.shape[0] - 1):
        v = ((phi[k + 1] - phi[k - 1]) / (2 * dt)).ravel()
        out.append(0.5 * v @ (asm.M @ v) + asm.potential(phi[k]))
    return np.array(out)


def discrete_momentum(asm: CellAssembly, phi) -> np.ndarray:
    """Total linear momentum ``sum_i m_i g (phi_i^{k+1} - phi_i^k) / dt`` per half level."""
    phi = np.asarray(phi)
    dt = asm.grid.dt
    d = (phi[1:] - phi[:-1]).reshape(phi.shape[0] - 1, asm.n_nodes, asm.N) / dt
    return np.einsum("i,kia,ab->kb", asm.mass, d, asm.g)


def rk4_reference(asm: CellAssembly, phi0, V0, dt: float, n_steps: int):
    """Classical fourth-order Runge-Kutta on ``M phi'' = -dV/dphi``.

    Returns positions and energies at every step (Dirichlet nodes frozen).
    """
    shape = np.shape(phi0)
    free = asm.free

    def acc(p):
        a = -asm.minv(asm.gradient(p.reshape(shape)))
        a[~free] = 0.0
        return a

    p = np.asarray(phi0, dtype=float).ravel().copy()
    v = np.asarray(V0, dtype=float).ravel().copy()
    v[~free] = 0.0
    energies = np.empty(n_steps + 1)
    traj = np.empty((n_steps + 1,) + shape)

    def energy(p, v):
        return 0.5 * v @ (asm.M @ v) + asm.potential(p.reshape(shape))

    energies[0] = energy(p, v)
    traj[0] = p.reshape(shape)
    for k in range(n_steps):
        k1p, k1v = v, acc(p)
        k2p, k2v = v + 0.5 * dt * k1v, acc(p + 0.5 * dt * k1p)
        k3p, k3v = v + 0.5 * dt * k2v, acc(p + 0.5 * dt * k2p)
        k4p, k4v = v + dt * k3v, acc(p + dt * k3p)
        p = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        energies[k + 1] = energy(p, v)
        traj[k + 1] = p.reshape(shape)
    return traj, energies


def linearized_solutions(asm: CellAssembly, phi, V_init) -> np.ndarray:
    """Propagate first variations through the trapezoid discrete EL equations.

    ``V_init`` holds the variations at the first two levels; the result has
    one variation per level of ``phi``.
    """
    phi = np.asarray(phi)
    dt2 = asm.grid.dt ** 2
    out = np.empty(phi.shape)
    out[:2] = V_init
    for k in range(1, phi.shape[0] - 1):
        Hv = asm.hessian(phi[k]) @ out[k].ravel()
        nxt = 2 * out[k].ravel() - out[k - 1].ravel() - dt2 * asm.minv(Hv)
        nxt[~asm.free] = 0.0
        out[k + 1] = nxt.reshape(out[k].shape)
    return out


def multisymplectic_defect(asm: CellAssembly, phi, V, W, cell_box, level_box):
    """Boundary sum of the discrete two-form over a space-time patch.

    The patch holds the cells with multi-index in ``cell_box`` (a tuple of
    ``(start, stop)`` per axis) and the time intervals ``level_box``.  For
    each element ``e`` and each of its nodes on the patch boundary,
    ``V_n H^e_nm W_m - W_n H^e_nm V_m`` is accumulated.  Returns
    ``(defect, scale)`` where ``scale`` sums the magnitudes of the terms.
    """
    phi = np.asarray(phi)
    grid = asm.grid
    n = grid.n_space
    dt = grid.dt
    cmask = np.zeros(grid.cell_shape, dtype=bool)
    cmask[tuple(slice(a, b) for a, b in cell_box)] = True
    cells = np.flatnonzero(cmask.ravel())
    k0, k1 = level_box
    # a node is interior to the patch when every incident element is inside
    inside_count = np.bincount(asm.conn[cells].ravel(), minlength=asm.n_nodes)
    total_count = np.bincount(asm.conn.ravel(), minlength=asm.n_nodes)
    spatial_interior = (inside_count == total_count) & (inside_count > 0)
    N = asm.N
    Q = asm.Q
    kin = (asm.a[cells] / Q / dt)[:, None, None, None, None] * np.einsum("qr,ab->qarb", np.eye(Q), asm.g)[None]
    defect = 0.0
    scale = 0.0
    hess = {}

    def element_h(k):
        if k not in hess:
            hess[k] = asm.element_hessians(phi[k])[cells]
        return hess[k]

    for k in range(k0, k1):
        # element (cell, [t_k, t_{k+1}]) Hessian blocks over (level, corner, comp)
        Hk = -0.5 * dt * element_h(k)
        Hk1 = -0.5 * dt * element_h(k + 1)
        E = len(cells)
        H = np.zeros((E, 2, Q, N, 2, Q, N))
        H[:, 0, :, :, 0] = kin + Hk
        H[:, 1, :, :, 1] = kin + Hk1
        H[:, 0, :, :, 1] = -kin
        H[:, 1, :, :, 0] = -kin
        nodes = asm.conn[cells]
        Ve = np.stack([V[k].reshape(-1, N)[nodes], V[k + 1].reshape(-1, N)[nodes]], axis=1)
        We = np.stack([W[k].reshape(-1, N)[nodes], W[k + 1].reshape(-1, N)[nodes]], axis=1)
        HW = np.einsum("elqamrb,emrb->elqa", H, We)
        HV = np.einsum("elqamrb,emrb->elqa", H, Ve)
        on_bd = np.empty((E, 2, Q), dtype=bool)
        for lvl, kk in enumerate((k, k + 1)):
            time_bd = kk == k0 or kk == k1
            on_bd[:, lvl] = time_bd | ~spatial_interior[nodes]
        terms = np.einsum("elqa,elqa->elq", Ve, HW) - np.einsum("elqa,elqa->elq", We, HV)
        defect += float(np.sum(terms[on_bd]))
        mags = np.abs(np.einsum("elqa,elqa->elq", Ve, HW)) + np.abs(np.einsum("elqa,elqa->elq", We, HV))
        scale += float(np.sum(mags[on_bd]))
    return defect, scale
