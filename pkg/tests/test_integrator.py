import numpy as np
import pytest

from multisym import dynamics as dyn
from multisym import geometry as geo
from multisym import integrator as it
from multisym import material as mat
from multisym.errors import ConfigError, NewtonDiverged, ShapeError, SingularSaddle
from multisym.fields import ConfigurationField, SpaceTimeGrid, corner_offsets, torus_lift
from multisym.verify import convergence_order

from conftest import flat_model

TWO_PI = 2 * np.pi


def torus(n, dt):
    return SpaceTimeGrid(((0.0, TWO_PI),) * 2, (n, n), dt, ("periodic",) * 2)


def affine_cell(A, b, u, h, dt):
    n = len(h)
    corners = np.array(corner_offsets(n), dtype=float) * h
    x0 = corners @ A.T + b
    return np.stack([x0, x0 + dt * u])


def bar(nc=16, dt=None, energy=None):
    grid = SpaceTimeGrid(((0.0, 1.0),), (nc + 1,), dt or 0.25 / nc, ("fixed",))
    model = mat.MaterialModel(1.0, energy or mat.StVenantKirchhoff(0.5, 0.25), geo.euclidean(1), geo.euclidean(1))
    return grid, model


def gas(n=16, dt=0.05, amp=0.2, energy=None):
    grid = torus(n, dt)
    X = grid.coords()
    V0 = amp * np.stack([np.sin(X[..., 1]) + 0.5 * np.sin(X[..., 0]), 0.5 * np.sin(X[..., 0]) + 0.3 * np.cos(X[..., 1])], -1)
    model = flat_model(energy or mat.quadratic_barotropic())
    return grid, model, X, V0


def taylor_green(n=16, dt=0.05):
    grid = torus(n, dt)
    X = grid.coords()
    x, y = X[..., 0], X[..., 1]
    V0 = np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], -1)
    return grid, flat_model(mat.ConstantEnergy(0.0), incompressible=True), X, V0


# configuration objects

def test_settings_validation():
    for bad in ({"newton_tol": 0.0}, {"max_iter": 0}, {"linear_solver": "qr"}, {"cg_tol": -1.0}):
        with pytest.raises(ConfigError):
            it.SolverSettings(**bad)
    with pytest.raises(ConfigError):
        it.DiscreteLagrangianConfig("simpson")


@pytest.mark.parametrize("quadrature", ["trapezoid", "midpoint"])
def test_quadrature_weights_sum_to_one(quadrature):
    assert sum(it.DiscreteLagrangianConfig(quadrature).time_weights()) == pytest.approx(1.0)


# discrete Lagrangian

def test_discrete_lagrangian_constant_density():
    h, dt = np.array([0.2, 0.3]), 0.1
    vol = h.prod() * dt
    cell = affine_cell(np.eye(2), np.zeros(2), np.zeros(2), h, dt)
    c = 1.7
    assert it.discrete_lagrangian(flat_model(mat.ConstantEnergy(-c)), cell, h, dt) == pytest.approx(c * vol)
    assert it.discrete_lagrangian(flat_model(mat.ConstantEnergy(c)), cell, h, dt) == pytest.approx(-c * vol)


@pytest.mark.parametrize("quadrature", ["trapezoid", "midpoint"])
def test_discrete_lagrangian_affine_section(quadrature, rng):
    h, dt = np.array([0.2, 0.3]), 0.1
    A = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
    u = rng.standard_normal(2)
    model = flat_model(mat.NeoHookean(0.6, 0.8), rho=1.3)
    cell = affine_cell(A, rng.standard_normal(2), u, h, dt)
    from conftest import jet
    density = mat.lagrangian_density(model, jet(A, u))
    Ld = it.discrete_lagrangian(model, cell, h, dt, it.DiscreteLagrangianConfig(quadrature))
    assert Ld == pytest.approx(density * h.prod() * dt, rel=1e-13)


def test_discrete_lagrangian_shape_error():
    with pytest.raises(ShapeError):
        it.discrete_lagrangian(flat_model(mat.ConstantEnergy()), np.zeros((2, 3, 2)), [0.1, 0.1], 0.1)


# single steps

def test_equilibrium_bar_is_fixed_point():
    grid, model = bar()
    X = grid.coords()
    fld = it.initialize(model, grid, X, np.zeros_like(X))
    nxt, info = it.step(model, fld, grid)
    assert info.iterations == 1
    assert np.array_equal(nxt.phi[-1], nxt.phi[-2])
    assert np.array_equal(nxt.phi[-1], X)


def test_uniform_flow_constrained_is_exact_translate():
    grid, model, X, _ = taylor_green(12)
    u0 = np.array([0.4, -0.25])
    V0 = np.broadcast_to(u0, X.shape).copy()
    settings = it.SolverSettings()
    fld = it.initialize(model, grid, X, V0, torus_lift(grid), settings, constrained=True)
    for _ in range(3):
        fld, info = it.step(model, fld, grid, settings, constrained=True)
        assert info.constraint < settings.newton_tol
    k = fld.n_levels - 1
    np.testing.assert_allclose(fld.phi[-1], X + k * grid.dt * u0, atol=1e-12)


def test_accepted_states_residual_shrinks_with_refinement():
    errs = []
    for n in (16, 32, 64):
        dt = 2.0 / n
        grid, model, X, V0 = gas(n, dt)
        steps = int(round(0.5 / dt))
        traj = it.run(model, it.initialize(model, grid, X, V0, torus_lift(grid)), grid, it.SolverSettings(), steps)
        errs.append(dyn.el_residual_barotropic(model, traj.field, grid, steps).worst)
    assert convergence_order(errs) >= 1.7


def test_newton_failure_reports_step():
    grid, model, X, V0 = gas(16, 0.3, amp=0.5, energy=mat.log_barotropic())
    fld = it.initialize(model, grid, X, V0, torus_lift(grid))
    with pytest.raises(NewtonDiverged) as exc:
        it.run(model, fld, grid, it.SolverSettings(max_iter=1), 5, config=it.DiscreteLagrangianConfig("midpoint"))
    assert exc.value.step == 1
    assert exc.value.residual > 1e-10


def test_rank_deficient_constraints_raise():
    grid = SpaceTimeGrid(((0.0, 1.0), (0.0, 1.0)), (3, 3), 0.1, ("fixed", "fixed"))
    model = flat_model(mat.ConstantEnergy(0.0), incompressible=True)
    X = grid.coords()
    V = np.zeros_like(X)
    V[1, 1] = [0.1, 0.0]
    with pytest.raises(SingularSaddle):
        fld = it.initialize(model, grid, X, V, constrained=True)
        it.step(model, fld, grid, constrained=True)


def test_step_needs_two_levels():
    grid, model = bar()
    with pytest.raises(ShapeError):
        it.step(model, ConfigurationField(grid.coords()[None]), grid)


# linear solvers

@pytest.mark.parametrize("solver", ["dense_lu", "conjugate_gradient"])
def test_linear_solvers_agree(solver):
    grid, model, X, V0 = taylor_green(12)
    out = {}
    for name in ("sparse_lu", solver):
        s = it.SolverSettings(linear_solver=name)
        fld = it.initialize(model, grid, X, V0, torus_lift(grid), s, constrained=True)
        out[name] = it.run(model, fld, grid, s, 4, constrained=True)
    np.testing.assert_allclose(out[solver].field.phi, out["sparse_lu"].field.phi, atol=1e-9)
    assert max(st.constraint for st in out[solver].steps) <= 1e-10


@pytest.mark.parametrize("solver", ["sparse_lu", "dense_lu", "conjugate_gradient"])
def test_midpoint_unconstrained_solvers(solver):
    grid, model, X, V0 = gas(12, 0.05, energy=mat.NeoHookean(0.5, 1.0))
    s = it.SolverSettings(linear_solver=solver)
    cfg = it.DiscreteLagrangianConfig("midpoint")
    traj = it.run(model, it.initialize(model, grid, X, V0, torus_lift(grid), s), grid, s, 5, config=cfg)
    ref = it.run(model, it.initialize(model, grid, X, V0, torus_lift(grid)), grid, it.SolverSettings(), 5, config=cfg)
    np.testing.assert_allclose(traj.field.phi, ref.field.phi, atol=1e-9)


def test_cg_rejected_for_implicit_constrained():
    grid, model, X, V0 = taylor_green(8)
    s = it.SolverSettings(linear_solver="conjugate_gradient")
    fld = it.initialize(model, grid, X, V0, torus_lift(grid), s, constrained=True)
    with pytest.raises(ConfigError):
        it.run(model, fld, grid, s, 1, constrained=True, config=it.DiscreteLagrangianConfig("midpoint"))


# runs

def test_run_zero_steps_keeps_initial_data():
    grid, model, X, V0 = gas(8)
    fld = it.initialize(model, grid, X, V0, torus_lift(grid))
    traj = it.run(model, fld, grid, n_steps=0)
    assert traj.field.n_levels == 2 and traj.steps == []
    assert np.array_equal(traj.field.phi, fld.phi)


def test_equilibrium_run_all_levels_equal():
    grid, model = bar()
    X = grid.coords()
    traj = it.run(model, it.initialize(model, grid, X, np.zeros_like(X)), grid, n_steps=20)
    assert np.all(traj.field.phi == X)


def test_run_is_deterministic():
    grid, model, X, V0 = taylor_green(12)
    runs = []
    for _ in range(2):
        fld = it.initialize(model, grid, X, V0, torus_lift(grid), constrained=True)
        runs.append(it.run(model, fld, grid, n_steps=5, constrained=True).field)
    assert np.array_equal(runs[0].phi, runs[1].phi)
    assert np.array_equal(runs[0].lam, runs[1].lam, equal_nan=True)


def test_hooks_follow_cadence():
    grid, model, X, V0 = gas(8)
    fld = it.initialize(model, grid, X, V0, torus_lift(grid))
    traj = it.run(model, fld, grid, n_steps=6, hooks={"level": lambda f, k: f.n_levels}, cadence=2)
    assert traj.diagnostics["level"] == [(2, 4), (4, 6), (6, 8)]


@pytest.mark.parametrize("quadrature", ["trapezoid", "midpoint"])
def test_discrete_momentum_conserved(quadrature):
    grid, model, X, V0 = gas(16, 0.05, energy=mat.log_barotropic())
    asm = it.CellAssembly(model, grid, 2, torus_lift(grid))
    traj = it.run(model, it.initialize(model, grid, X, V0, torus_lift(grid)), grid, n_steps=30,
                  config=it.DiscreteLagrangianConfig(quadrature))
    P = it.discrete_momentum(asm, traj.field.phi)
    assert np.abs(P - P[0]).max() <= 1e-10 * max(1.0, np.abs(P).max())


def test_constraint_preserved_in_constrained_run():
    grid, model, X, V0 = taylor_green(16, 0.02)
    s = it.SolverSettings()
    traj = it.run(model, it.initialize(model, grid, X, V0, torus_lift(grid), s, constrained=True), grid, s, 20,
                  constrained=True)
    asm = it.CellAssembly(model, grid, 2, torus_lift(grid))
    worst = max(np.abs(asm.J(p) - 1.0).max() for p in traj.field.phi)
    assert worst <= 10 * s.newton_tol


def test_seed_order_one_is_plain_euler():
    grid, model, X, V0 = gas(8)
    fld = it.initialize(model, grid, X, V0, torus_lift(grid), seed_order=1)
    np.testing.assert_array_equal(fld.phi[1], X + grid.dt * V0)
    with pytest.raises(ConfigError):
        it.initialize(model, grid, X, V0, torus_lift(grid), seed_order=3)


def test_rk4_reference_conserves_at_small_dt():
    grid, model = bar(16)
    X = grid.coords()
    asm = it.CellAssembly(model, grid, 1)
    _, E = it.rk4_reference(asm, X + 1e-3 * np.sin(np.pi * X), np.zeros_like(X), 0.001, 200)
    assert abs(E[-1] - E[0]) / E[0] <= 1e-6
