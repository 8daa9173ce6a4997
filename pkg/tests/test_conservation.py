import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multisym import conservation as cs
from multisym import geometry as geo
from multisym import material as mat
from multisym.errors import WrongEnergyKind
from multisym.fields import ConfigurationField, JetSample, SpaceTimeGrid, torus_lift
from multisym.verify import convergence_order, random_jets

from conftest import flat_model, jet

TWO_PI = 2 * np.pi


def torus(n, dt=0.05):
    return SpaceTimeGrid(((0.0, TWO_PI),) * 2, (n, n), dt, ("periodic",) * 2)


def samples(rng, n=100, lam=True):
    return random_jets(rng, n, 2, 2, [1.0, 0.0], [2.0, 1.0], spread=0.2, lam=lam)


METRICS = {"flat": lambda: (geo.euclidean(2), geo.euclidean(2)), "polar": lambda: (geo.polar(), geo.polar())}


# generators and prolongation

def test_zero_generator_prolongs_to_zero(rng):
    s = samples(rng, 10)
    pro = cs.prolong_generator(cs.translation([0.0, 0.0]), s)
    for part in (pro.base, pro.fiber, pro.lam, pro.v, pro.beta):
        assert np.all(part == 0)


def test_translation_has_no_jet_part(rng):
    s = samples(rng, 10)
    pro = cs.prolong_generator(cs.translation([0.3, -1.0]), s)
    np.testing.assert_array_equal(pro.base[..., 1:], np.broadcast_to([0.3, -1.0], (10, 2)))
    assert np.all(pro.base[..., 0] == 0) and np.all(pro.v == 0) and np.all(pro.beta == 0)


def test_time_translation_prolongation(rng):
    s = samples(rng, 5)
    pro = cs.prolong_generator(cs.time_translation(0.7), s)
    assert np.all(pro.base[..., 0] == 0.7) and np.all(pro.base[..., 1:] == 0) and np.all(pro.v == 0)


def test_sine_stream_prolongation_matches_hand_contraction(rng):
    gen = cs.sine_stream()
    s = samples(rng, 50)
    pro = cs.prolong_generator(gen, s)
    x = s.x
    h = 1e-6
    dxi = np.zeros(x.shape + (2,))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        dxi[..., :, j] = (gen.xi(x + e) - gen.xi(x - e)) / (2 * h)
    np.testing.assert_allclose(pro.v[..., 1:], -np.einsum("...am,...mj->...aj", s.F, dxi), atol=1e-9)
    np.testing.assert_allclose(pro.beta[..., 1:], -np.einsum("...m,...mj->...j", s.beta[..., 1:], dxi), atol=1e-9)
    assert np.all(pro.v[..., 0] == 0)
    psi_grad = np.stack([np.cos(x[:, 0]) * np.sin(x[:, 1]), np.sin(x[:, 0]) * np.cos(x[:, 1])], -1)
    np.testing.assert_allclose(pro.base[..., 1:], np.stack([-psi_grad[:, 1], psi_grad[:, 0]], -1), atol=1e-15)


def test_generators_are_solenoidal():
    grid = torus(32)
    assert cs.solenoidality_defect(cs.sine_stream(), grid) <= 1e-10
    assert cs.solenoidality_defect(cs.translation([1.0, 2.0]), grid) == 0.0
    boxed = SpaceTimeGrid(((0.0, np.pi), (0.0, np.pi)), (9, 9), 0.1, ("fixed", "fixed"))
    assert cs.solenoidality_defect(cs.sine_stream(), boxed) <= 1e-10
    assert cs.solenoidality_defect(cs.translation([1.0, 0.0]), boxed) == 1.0


def test_generator_validation():
    with pytest.raises(ValueError):
        cs.SymmetryGenerator("boost")
    with pytest.raises(ValueError):
        cs.SymmetryGenerator("relabeling")


# currents

def test_zero_generator_zero_current(rng):
    c = cs.momentum_map(flat_model(mat.log_barotropic()), samples(rng, 20, lam=False), cs.translation([0.0, 0.0]))
    assert c.max_abs() == 0.0


def test_rest_fluid_current_vanishes():
    model = flat_model(mat.ConstantEnergy(0.0))
    c = cs.momentum_map(model, jet(np.eye(2)), cs.translation([0.4, 0.9]))
    assert c.max_abs() == 0.0


@pytest.mark.parametrize("metrics", sorted(METRICS))
def test_barotropic_closed_form(metrics, rng):
    G, g = METRICS[metrics]()
    model = mat.MaterialModel(1.3, mat.log_barotropic(), G, g)
    s = samples(rng, lam=False)
    for gen in (cs.sine_stream(), cs.translation([0.2, -0.5])):
        assert (cs.momentum_map(model, s, gen) - cs.barotropic_current(model, s, gen)).max_abs() <= 1e-12


@pytest.mark.parametrize("metrics", sorted(METRICS))
@pytest.mark.parametrize("energy", [mat.ConstantEnergy(0.2), mat.log_barotropic()], ids=["constant", "barotropic"])
def test_incompressible_closed_form(metrics, energy, rng):
    G, g = METRICS[metrics]()
    model = mat.MaterialModel(1.3, energy, G, g, incompressible=True)
    s = samples(rng)
    gen = cs.sine_stream()
    assert (cs.momentum_map(model, s, gen) - cs.incompressible_current(model, s, gen)).max_abs() <= 1e-12


@pytest.mark.parametrize("metrics", sorted(METRICS))
@pytest.mark.parametrize("kind", ["barotropic", "elastic", "incompressible"])
def test_time_translation_closed_form(metrics, kind, rng):
    G, g = METRICS[metrics]()
    energy = {"barotropic": mat.polytropic(), "elastic": mat.NeoHookean(1.0, 2.0),
              "incompressible": mat.ConstantEnergy(0.3)}[kind]
    model = mat.MaterialModel(1.3, energy, G, g, incompressible=kind == "incompressible")
    s = samples(rng, lam=kind == "incompressible")
    gen = cs.time_translation(0.7)
    assert (cs.momentum_map(model, s, gen) - cs.time_translation_current(model, s, gen)).max_abs() <= 1e-12


def test_time_translation_density_is_energy(rng):
    model = mat.MaterialModel(1.3, mat.polytropic(), geo.polar(), geo.euclidean(2))
    s = samples(rng, 20, lam=False)
    c = cs.momentum_map(model, s, cs.time_translation(1.0))
    np.testing.assert_allclose(c.J0, -mat.energy_density(model, s), rtol=1e-13)


def test_closed_form_kind_errors(rng):
    s = samples(rng, 3, lam=False)
    with pytest.raises(WrongEnergyKind):
        cs.barotropic_current(flat_model(mat.NeoHookean(1.0, 1.0)), s, cs.sine_stream())


# equivariance

@pytest.mark.parametrize("energy", [mat.ConstantEnergy(0.4), mat.log_barotropic(), mat.polytropic()],
                         ids=["constant", "log", "polytropic"])
def test_relabeling_equivariance(energy, rng):
    model = flat_model(energy, rho=1.2)
    s = samples(rng, lam=False)
    for _ in range(10):
        A = cs.random_unimodular(rng, 2)
        assert np.linalg.det(A) == pytest.approx(1.0)
        assert np.max(cs.equivariance_defect(model, s, A, rng.normal(size=2))) <= 1e-12


def test_equivariance_with_multiplier(rng):
    model = flat_model(mat.ConstantEnergy(0.0), incompressible=True)
    s = samples(rng)
    A = cs.random_unimodular(rng, 2)
    assert np.max(cs.equivariance_defect(model, s, A, np.zeros(2))) <= 1e-12


def test_elastic_energy_is_not_relabeling_invariant(rng):
    model = flat_model(mat.NeoHookean(1.0, 2.0))
    s = samples(rng, 20, lam=False)
    A = np.array([[1.0, 0.5], [0.0, 1.0]])
    assert np.max(cs.equivariance_defect(model, s, A, np.zeros(2))) > 1e-3


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-0.6, 0.6), b=st.floats(-0.6, 0.6), c=st.floats(-0.6, 0.6), t=st.floats(-3, 3))
def test_equivariance_property(a, b, c, t):
    A = np.array([[1.0 + a, b], [c, 1.0]])
    d = np.linalg.det(A)
    if d < 0.2:
        return
    A = A / np.sqrt(d)
    rng = np.random.default_rng(7)
    model = flat_model(mat.polytropic(), rho=0.8)
    s = samples(rng, 10, lam=False)
    assert np.max(cs.equivariance_defect(model, s, A, np.array([t, -t]))) <= 1e-12


# divergence checks

# positions of size 2 pi pass through two difference quotients with h ~ 0.4
ROUNDOFF = 1e-11


def levels(grid, fn, count=3):
    return np.stack([fn(grid.coords(), k * grid.dt) for k in range(count)])


def test_static_equilibrium_divergence_zero():
    grid = torus(16)
    fld = ConfigurationField(levels(grid, lambda X, t: X.copy()), None, torus_lift(grid))
    model = flat_model(mat.log_barotropic())
    for gen in (cs.sine_stream(), cs.translation([1.0, 0.0]), cs.time_translation()):
        assert np.abs(cs.noether_divergence(model, fld, grid, gen)).max() <= ROUNDOFF


def test_uniform_flow_constant_generator():
    grid = torus(16)
    u0 = np.array([0.3, 0.1])
    fld = ConfigurationField(levels(grid, lambda X, t: X + t * u0), None, torus_lift(grid))
    model = flat_model(mat.quadratic_barotropic())
    assert np.abs(cs.noether_divergence(model, fld, grid, cs.translation([0.5, -1.0]))).max() <= ROUNDOFF


def test_energy_continuity_examples():
    grid = torus(12)
    model = flat_model(mat.NeoHookean(1.0, 2.0))
    eq = ConfigurationField(levels(grid, lambda X, t: X.copy()), None, torus_lift(grid))
    assert np.abs(cs.energy_continuity_residual(model, eq, grid)).max() == 0.0
    u0 = np.array([0.2, -0.4])
    rigid = ConfigurationField(levels(grid, lambda X, t: X + t * u0), None, torus_lift(grid))
    assert np.abs(cs.energy_continuity_residual(model, rigid, grid)).max() <= ROUNDOFF
    with pytest.raises(WrongEnergyKind):
        cs.energy_continuity_residual(flat_model(mat.ConstantEnergy()), eq, grid)


def wavy(eps=0.05, dil=0.0):
    def fn(X, t):
        x, y = X[..., 0], X[..., 1]
        return np.stack([x + eps * np.sin(x - t) * np.cos(y) + 0.1 * dil * np.sin(x),
                         y + eps * np.cos(x + 2 * y + t)], -1)
    return fn


def test_noether_recovers_barotropic_equations():
    gaps = []
    for n in (32, 64, 128):
        grid = torus(n, 0.4 / n)
        fld = ConfigurationField(levels(grid, wavy()), None, torus_lift(grid))
        model = flat_model(mat.quadratic_barotropic(), rho=1.3)
        check = cs.noether_implies_el_check(model, fld, grid, cs.sine_stream())
        assert check.divergence > 1e-2
        gaps.append(check.gap)
    assert convergence_order(gaps) >= 1.8


def test_zero_generator_gap_is_zero():
    grid = torus(16)
    fld = ConfigurationField(levels(grid, wavy()), None, torus_lift(grid))
    check = cs.noether_implies_el_check(flat_model(mat.log_barotropic()), fld, grid, cs.translation([0.0, 0.0]))
    assert check.gap == 0.0


def test_incompressible_recovery_on_volume_preserving_shear():
    gaps = []
    for n in (16, 32, 64):
        grid = torus(n, 0.4 / n)

        def shear(X, t):
            out = X.copy()
            out[..., 0] += 0.1 * np.sin(X[..., 1] + t)
            return out

        lam = np.stack([np.cos(grid.cell_centers()[..., 0] + k * grid.dt) for k in range(3)])
        fld = ConfigurationField(levels(grid, shear), lam, torus_lift(grid))
        model = flat_model(mat.ConstantEnergy(0.0), incompressible=True)
        gaps.append(cs.noether_implies_el_check(model, fld, grid, cs.sine_stream()).gap)
    assert convergence_order(gaps) >= 1.8


def test_incompressible_gap_persists_for_dilating_section():
    gaps = []
    for n in (16, 32, 64):
        grid = torus(n, 0.4 / n)
        lam = np.cos(grid.cell_centers()[..., 0])[None].repeat(3, 0)
        fld = ConfigurationField(levels(grid, wavy(dil=1.0)), lam, torus_lift(grid))
        model = flat_model(mat.ConstantEnergy(0.0), rho=1.3, incompressible=True)
        gaps.append(cs.noether_implies_el_check(model, fld, grid, cs.sine_stream()).gap)
    assert min(gaps) >= 0.05
    assert gaps[-1] >= 0.5 * gaps[0]


def test_recovery_check_kind_error():
    grid = torus(8)
    fld = ConfigurationField(levels(grid, wavy()), None, torus_lift(grid))
    with pytest.raises(WrongEnergyKind):
        cs.noether_implies_el_check(flat_model(mat.NeoHookean(1.0, 1.0)), fld, grid, cs.sine_stream())
