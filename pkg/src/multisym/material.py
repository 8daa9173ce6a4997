"""Stored energies and the jet-level mechanics built on them.

All functions accept batched :class:`~multisym.fields.JetSample` objects.
Index conventions: ``F[..., a, i]`` is the deformation gradient,
``dW/dF`` has the same layout, ``dW/dg[..., a, b]`` is the symmetric
derivative with respect to the fiber metric and second derivatives are
stored as ``[..., a, i, b, j]``.

Elastic energies take volumetric Lame constants; the per-unit-mass stored
energy is the volumetric one divided by the reference density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import smallmat as sm
from .errors import MissingMultiplier, NonDifferentiable, NonRegular, ShapeError, WrongEnergyKind
from .fields import JetSample
from .geometry import MetricField

__all__ = [
    "StoredEnergy",
    "ConstantEnergy",
    "BarotropicEnergy",
    "quadratic_barotropic",
    "log_barotropic",
    "polytropic",
    "StVenantKirchhoff",
    "NeoHookean",
    "MaterialModel",
    "Momenta",
    "SpatialFields",
    "jacobian",
    "green_tensor",
    "finger_inverse",
    "stored_energy",
    "dW_dF",
    "dW_dg",
    "d2W_dF2",
    "lagrangian_density",
    "total_lagrangian",
    "legendre",
    "energy_density",
    "cartan_coefficients",
    "cartan_pullback",
    "cauchy_stress",
    "barotropic_cauchy_stress",
    "material_pressure",
    "piola_kirchhoff",
    "piola_transform",
    "spatial_fields",
]


def _det_ratio_sqrt(g, G):
    return np.sqrt(sm.det(g) / sm.det(G))


class StoredEnergy:
    """Base class. ``kind`` is ``constant``, ``barotropic`` or ``elastic``."""

    kind = "abstract"

    def W(self, F, g, G, rho):
        raise NotImplementedError

    def dF(self, F, g, G, rho):
        raise NonDifferentiable(f"{type(self).__name__} provides no dW/dF")

    def dg(self, F, g, G, rho):
        raise NonDifferentiable(f"{type(self).__name__} provides no dW/dg")

    def dFF(self, F, g, G, rho):
        raise NonDifferentiable(f"{type(self).__name__} provides no second derivatives")

    def describe(self) -> dict:
        return {"kind": self.kind}


class ConstantEnergy(StoredEnergy):
    kind = "constant"

    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def W(self, F, g, G, rho):
        return np.full(F.shape[:-2], self.c)

    def dF(self, F, g, G, rho):
        return np.zeros(F.shape)

    def dg(self, F, g, G, rho):
        return np.zeros(g.shape)

    def dFF(self, F, g, G, rho):
        return np.zeros(F.shape + F.shape[-2:])

    def describe(self):
        return {"kind": "constant", "c": self.c}


class BarotropicEnergy(StoredEnergy):
    """Energy per unit mass depending on the Jacobian only, ``W = w(J)``."""

    kind = "barotropic"

    def __init__(self, w: Callable, dw: Callable, d2w: Callable | None = None, name: str = "custom"):
        self.w = w
        self.dw = dw
        self.d2w = d2w
        self.name = name

    @staticmethod
    def _J(F, g, G):
        if F.shape[-1] != F.shape[-2]:
            raise ShapeError("barotropic energies need n = N")
        return sm.det(F) * _det_ratio_sqrt(g, G)

    def W(self, F, g, G, rho):
        return self.w(self._J(F, g, G))

    def dF(self, F, g, G, rho):
        J = self._J(F, g, G)
        finv_t = np.swapaxes(sm.inv(F), -1, -2)
        return (self.dw(J) * J)[..., None, None] * finv_t

    def dg(self, F, g, G, rho):
        J = self._J(F, g, G)
        return (0.5 * self.dw(J) * J)[..., None, None] * sm.inv(g)

    def dFF(self, F, g, G, rho):
        if self.d2w is None:
            raise NonDifferentiable(f"barotropic energy {self.name!r} has no second derivative")
        J = self._J(F, g, G)
        finv = sm.inv(F)
        outer = np.einsum("...ia,...jb->...aibj", finv, finv)
        swap = np.einsum("...ib,...ja->...aibj", finv, finv)
        a = (self.d2w(J) * J * J)[..., None, None, None, None]
        b = (self.dw(J) * J)[..., None, None, None, None]
        return a * outer + b * (outer - swap)

    def describe(self):
        return {"kind": "barotropic", "name": self.name}


def quadratic_barotropic(stiffness: float = 1.0) -> BarotropicEnergy:
    """``w(J) = k (J - 1)^2 / 2``."""
    k = float(stiffness)
    e = BarotropicEnergy(lambda J: 0.5 * k * (J - 1.0) ** 2, lambda J: k * (J - 1.0),
                         lambda J: k * np.ones_like(J), name="quadratic")
    e.params = {"stiffness": k}
    return e


def log_barotropic() -> BarotropicEnergy:
    """``w(J) = J ln J - J + 1``, so ``w'(J) = ln J``."""
    def w(J):
        return J * np.log(J) - J + 1.0

    return BarotropicEnergy(w, np.log, lambda J: 1.0 / J, name="log")


def polytropic(kappa: float = 1.0, gamma: float = 1.4) -> BarotropicEnergy:
    """Ideal-gas energy ``w(J) = kappa J^(1-gamma) / (gamma - 1)``.

    The pressure is ``P = rho kappa J^(-gamma)``.
    """
    k, g = float(kappa), float(gamma)
    e = BarotropicEnergy(lambda J: k * J ** (1.0 - g) / (g - 1.0), lambda J: -k * J ** (-g),
                         lambda J: k * g * J ** (-g - 1.0), name="polytropic")
    e.params = {"kappa": k, "gamma": g}
    return e


class _GreenTensorEnergy(StoredEnergy):
    """Energies of the Green tensor ``C = F^T g F`` (volumetric density / rho)."""

    kind = "elastic"

    def w_C(self, C, G):
        raise NotImplementedError

    def dw_C(self, C, G):
        raise NotImplementedError

    def d2w_C(self, C, G):
        raise NotImplementedError

    def W(self, F, g, G, rho):
        C = _pull(F, g)
        return self.w_C(C, G) / rho

    def dF(self, F, g, G, rho):
        C = _pull(F, g)
        gF = np.einsum("...ab,...bj->...aj", g, F)
        return 2.0 * np.einsum("...aj,...ji->...ai", gF, self.dw_C(C, G)) / rho[..., None, None]

    def dg(self, F, g, G, rho):
        C = _pull(F, g)
        return np.einsum("...ai,...ij,...bj->...ab", F, self.dw_C(C, G), F) / rho[..., None, None]

    def dFF(self, F, g, G, rho):
        C = _pull(F, g)
        gF = np.einsum("...ab,...bj->...aj", g, F)
        S = self.dw_C(C, G)
        H = self.d2w_C(C, G)
        out = 2.0 * np.einsum("...ab,...ij->...aibj", g, S)
        out += 4.0 * np.einsum("...al,...bm,...iljm->...aibj", gF, gF, H)
        return out / rho[..., None, None, None, None]


class StVenantKirchhoff(_GreenTensorEnergy):
    """``(lam/2)(tr E)^2 + mu tr(E^2)`` with ``E = (C - G)/2``, traces taken with ``G``."""

    def __init__(self, lame_lambda: float, lame_mu: float):
        self.lam = float(lame_lambda)
        self.mu = float(lame_mu)

    def w_C(self, C, G):
        Gi = sm.inv(G)
        E = 0.5 * (C - G)
        A = Gi @ E
        trE = np.trace(A, axis1=-2, axis2=-1)
        trE2 = np.trace(A @ A, axis1=-2, axis2=-1)
        return 0.5 * self.lam * trE ** 2 + self.mu * trE2

    def dw_C(self, C, G):
        Gi = sm.inv(G)
        E = 0.5 * (C - G)
        trE = np.einsum("...ij,...ji->...", Gi, E)
        return 0.5 * self.lam * trE[..., None, None] * Gi + self.mu * Gi @ E @ Gi

    def d2w_C(self, C, G):
        Gi = sm.inv(G)
        return 0.25 * (self.lam * np.einsum("...ij,...kl->...ijkl", Gi, Gi)
                       + self.mu * (np.einsum("...ik,...jl->...ijkl", Gi, Gi)
                                    + np.einsum("...il,...jk->...ijkl", Gi, Gi)))

    def describe(self):
        return {"kind": "stvenant", "lame_lambda": self.lam, "lame_mu": self.mu}


class NeoHookean(_GreenTensorEnergy):
    """``(mu/2)(tr C - n) - mu ln J + (lam/2)(ln J)^2`` with ``J^2 = det C / det G``."""

    def __init__(self, lame_mu: float, lame_lambda: float):
        self.mu = float(lame_mu)
        self.lam = float(lame_lambda)

    @staticmethod
    def _logJ(C, G):
        dc = sm.det(C)
        if np.any(dc <= 0):
            raise NonRegular("neo-Hookean energy needs det C > 0")
        return 0.5 * np.log(dc / sm.det(G))

    def w_C(self, C, G):
        n = C.shape[-1]
        lj = self._logJ(C, G)
        trC = np.einsum("...ij,...ji->...", sm.inv(G), C)
        return 0.5 * self.mu * (trC - n) - self.mu * lj + 0.5 * self.lam * lj ** 2

    def dw_C(self, C, G):
        lj = self._logJ(C, G)
        return 0.5 * (self.mu * sm.inv(G) + (self.lam * lj - self.mu)[..., None, None] * sm.inv(C))

    def d2w_C(self, C, G):
        lj = self._logJ(C, G)
        Ci = sm.inv(C)
        coef = (self.lam * lj - self.mu)[..., None, None, None, None]
        return (0.25 * self.lam * np.einsum("...ij,...kl->...ijkl", Ci, Ci)
                - 0.25 * coef * (np.einsum("...ik,...jl->...ijkl", Ci, Ci)
                                 + np.einsum("...il,...jk->...ijkl", Ci, Ci)))

    def describe(self):
        return {"kind": "neohookean", "lame_mu": self.mu, "lame_lambda": self.lam}


@dataclass
class MaterialModel:
    """Reference density, stored energy and the base/fiber metric pair.

    ``incompressible`` switches on the Jacobian constraint with a multiplier
    carried by the jet samples.
    """

    rho: float | Callable
    energy: StoredEnergy
    G: MetricField
    g: MetricField
    incompressible: bool = False

    def __post_init__(self):
        if np.isscalar(self.rho) and not float(self.rho) > 0:
            raise ValueError("density must be positive")

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if callable(self.rho):
            r = np.asarray(self.rho(x), dtype=float)
            if np.any(r <= 0):
                raise ValueError("density must be positive on the chart")
            return r
        return np.full(x.shape[:-1], float(self.rho))

    @property
    def homogeneous(self) -> bool:
        return not callable(self.rho)


@dataclass
class Momenta:
    """Multimomenta ``p_a^0``, ``p_a^j``, ``Pi`` and the multiplier momenta ``pi^mu``."""

    p0: np.ndarray
    pj: np.ndarray
    Pi: np.ndarray
    pi_mu: np.ndarray | None = None


@dataclass
class SpatialFields:
    """Spatial density and pressure attached to the image point ``position``."""

    rho_sp: np.ndarray
    position: np.ndarray
    pressure: np.ndarray | None


def _pull(F, g):
    """``F^T g F``."""
    return np.swapaxes(F, -1, -2) @ g @ F


def _metrics(model, s):
    return model.g.checked(s.y), model.G.checked(s.x)


def _args(model, s):
    g, G = _metrics(model, s)
    return s.F, g, G, model.density(s.x)


def _sqrtG(model, s):
    return np.sqrt(sm.det(model.G.checked(s.x)))


def jacobian(model: MaterialModel, sample: JetSample, check: bool = True) -> np.ndarray:
    """``J = det F sqrt(det g(y) / det G(x))``."""
    if sample.N != sample.n:
        raise ShapeError("the Jacobian needs n = N")
    g, G = _metrics(model, sample)
    d = sm.det(sample.F)
    if check and np.any(d <= 0):
        raise NonRegular("deformation gradient has non-positive determinant")
    return d * _det_ratio_sqrt(g, G)


def green_tensor(model: MaterialModel, sample: JetSample) -> np.ndarray:
    g = model.g.checked(sample.y)
    return _pull(sample.F, g)


def finger_inverse(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``c_ab = G_ij (F^-1)^i_a (F^-1)^j_b``."""
    if np.any(np.abs(sm.det(sample.F)) <= 0):
        raise NonRegular("Finger tensor needs an invertible deformation gradient")
    G = model.G.checked(sample.x)
    finv = sm.inv(sample.F)
    return np.einsum("...ia,...ij,...jb->...ab", finv, G, finv)


def stored_energy(model, sample):
    return model.energy.W(*_args(model, sample))


def dW_dF(model, sample):
    return model.energy.dF(*_args(model, sample))


def dW_dg(model, sample):
    return model.energy.dg(*_args(model, sample))


def d2W_dF2(model, sample):
    return model.energy.dFF(*_args(model, sample))


def lagrangian_density(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``sqrt(det G) rho (g(v0, v0)/2 - W)``."""
    F, g, G, rho = _args(model, sample)
    kin = 0.5 * np.einsum("...a,...ab,...b->...", sample.v0, g, sample.v0)
    return np.sqrt(sm.det(G)) * rho * (kin - model.energy.W(F, g, G, rho))


def _multiplier(sample):
    if sample.lam is None:
        raise MissingMultiplier("incompressible model needs the multiplier on the jet sample")
    return sample.lam


def total_lagrangian(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """Lagrangian density of the model: ``L`` or ``L + lam (J - 1)`` when incompressible."""
    L = lagrangian_density(model, sample)
    if model.incompressible:
        L = L + _multiplier(sample) * (jacobian(model, sample, check=False) - 1.0)
    return L


def legendre(model: MaterialModel, sample: JetSample) -> Momenta:
    F, g, G, rho = _args(model, sample)
    sg = np.sqrt(sm.det(G))
    p0 = (rho * sg)[..., None] * np.einsum("...ab,...b->...a", g, sample.v0)
    pj = -(rho * sg)[..., None, None] * model.energy.dF(F, g, G, rho)
    pi_mu = None
    if model.incompressible:
        lam = _multiplier(sample)
        J = jacobian(model, sample)
        finv_t = np.swapaxes(sm.inv(F), -1, -2)
        pj = pj + (lam * J)[..., None, None] * finv_t
        pi_mu = np.zeros(sample.x.shape[:-1] + (sample.n + 1,))
    L = total_lagrangian(model, sample)
    Pi = L - np.einsum("...a,...a->...", p0, sample.v0) - np.einsum("...aj,...aj->...", pj, F)
    return Momenta(p0, pj, Pi, pi_mu)


def energy_density(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``e = p_a^0 v^a_0 - L`` (kinetic plus potential density)."""
    m = legendre(model, sample)
    return np.einsum("...a,...a->...", m.p0, sample.v0) - total_lagrangian(model, sample)


def cartan_coefficients(model: MaterialModel, sample: JetSample):
    """Coefficients of ``dy^a ^ d^n x_j``, ``dy^a ^ d^n x_0`` and ``d^{n+1} x``."""
    m = legendre(model, sample)
    return m.pj, m.p0, m.Pi


def cartan_pullback(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """Coefficient of the Cartan form pulled back along a holonomic jet: ``Pi + p_a^mu v^a_mu``."""
    pj, p0, Pi = cartan_coefficients(model, sample)
    return Pi + np.einsum("...a,...a->...", p0, sample.v0) + np.einsum("...aj,...aj->...", pj, sample.F)


def cauchy_stress(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """Doyle-Ericksen stress ``sigma^ab = (2 rho / J) dW/dg_ab``."""
    J = jacobian(model, sample)
    F, g, G, rho = _args(model, sample)
    return (2.0 * rho / J)[..., None, None] * model.energy.dg(F, g, G, rho)


def _require_barotropic(model):
    if model.energy.kind != "barotropic":
        raise WrongEnergyKind(f"operation needs a barotropic energy, got {model.energy.kind}")


def material_pressure(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``P = -rho w'(J)``."""
    _require_barotropic(model)
    J = jacobian(model, sample)
    return -model.density(sample.x) * model.energy.dw(J)


def barotropic_cauchy_stress(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """Closed form ``sigma^ab = -P g^ab`` for barotropic energies."""
    P = material_pressure(model, sample)
    return -P[..., None, None] * sm.inv(model.g.checked(sample.y))


def piola_kirchhoff(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """First Piola-Kirchhoff stress ``P_a^i = rho dW/dv^a_i``."""
    F, g, G, rho = _args(model, sample)
    return rho[..., None, None] * model.energy.dF(F, g, G, rho)


def piola_transform(model: MaterialModel, sample: JetSample) -> np.ndarray:
    """``J g_ab sigma^bc (F^-1)^i_c`` computed from the Cauchy stress."""
    sigma = cauchy_stress(model, sample)
    J = jacobian(model, sample)
    g = model.g.checked(sample.y)
    finv = sm.inv(sample.F)
    return J[..., None, None] * np.einsum("...ab,...bc,...ic->...ai", g, sigma, finv)


def spatial_fields(model: MaterialModel, sample: JetSample) -> SpatialFields:
    """Spatial density ``rho / J`` and the pressure carried to the image point ``y``."""
    J = jacobian(model, sample)
    rho_sp = model.density(sample.x) / J
    if model.incompressible:
        pressure = _multiplier(sample) / _sqrtG(model, sample)
    elif model.energy.kind == "barotropic":
        pressure = material_pressure(model, sample)
    elif model.energy.kind == "constant":
        pressure = None
    else:
        raise WrongEnergyKind("spatial fields are defined for barotropic or incompressible models")
    return SpatialFields(rho_sp, sample.y.copy(), pressure)
