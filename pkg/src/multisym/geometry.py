"""Riemannian metrics on a single coordinate chart.

Every operation is vectorized over leading batch axes: a point array of
shape ``(..., dim)`` yields metric components of shape ``(..., dim, dim)``
and derivative arrays of shape ``(..., dim, dim, dim)`` indexed as
``[..., k, i, j] = d_k M_ij``.

Charts are dimensionless; physical units live in the density and the
stored energy.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from . import smallmat as sm
from .errors import DomainError, SingularMetric

__all__ = [
    "COND_CAP",
    "MetricField",
    "euclidean",
    "conformal",
    "polar",
    "table_metric",
    "load_metric_table",
    "write_metric_table",
    "christoffel",
    "metric_det_sqrt",
    "covariant_accel",
]

COND_CAP = 1e12


class MetricField:
    """Symmetric positive-definite metric on one chart.

    Parameters
    ----------
    dim : int
        Chart dimension.
    kind : str
        One of ``euclidean``, ``conformal``, ``polar``, ``user_table``.
    eval_fn, deriv_fn : callable
        Batched maps ``x -> M(x)`` and ``x -> dM(x)``.
    constant : bool
        True when the components do not depend on the point.
    domain : callable, optional
        Raises :class:`DomainError` for points outside the chart.
    """

    def __init__(self, dim: int, kind: str, eval_fn: Callable, deriv_fn: Callable,
                 *, constant: bool = False, domain: Callable | None = None,
                 params: dict | None = None):
        self.dim = int(dim)
        self.kind = kind
        self._eval = eval_fn
        self._deriv = deriv_fn
        self.constant = constant
        self._domain = domain
        self.params = dict(params or {})

    def __repr__(self):
        return f"MetricField(dim={self.dim}, kind={self.kind!r})"

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected points with trailing dimension {self.dim}, got {x.shape}")
        if self._domain is not None:
            self._domain(x)
        return x

    def eval(self, x) -> np.ndarray:
        return self._eval(self._points(x))

    def deriv(self, x) -> np.ndarray:
        return self._deriv(self._points(x))

    def checked(self, x) -> np.ndarray:
        """Components at ``x``, raising :class:`SingularMetric` when unusable."""
        m = self.eval(x)
        _check_metric(m)
        return m

    def inverse(self, x) -> np.ndarray:
        return sm.inv(self.checked(x))

    def det(self, x) -> np.ndarray:
        return sm.det(self.eval(x))


def _extreme_eigenvalues(m):
    """Smallest and largest eigenvalues of symmetric ``m``; closed form up to 2x2."""
    d = m.shape[-1]
    if d == 1:
        return m[..., 0, 0], m[..., 0, 0]
    if d == 2:
        a, c = m[..., 0, 0], m[..., 1, 1]
        b = 0.5 * (m[..., 0, 1] + m[..., 1, 0])
        hi = 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(hi > 0, (a * c - b * b) / hi, 0.5 * (a + c) - np.hypot(0.5 * (a - c), b))
        return lo, hi
    w = np.linalg.eigvalsh(m)
    return w[..., 0], w[..., -1]


def _check_metric(m):
    lo, hi = _extreme_eigenvalues(m)
    if (np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo <= 0.0)
            or np.any(hi > COND_CAP * lo)):
        raise SingularMetric("metric is not positive definite or its condition number exceeds 1e12")


def euclidean(dim: int) -> MetricField:
    eye = np.eye(dim)

    def ev(x):
        return np.broadcast_to(eye, x.shape[:-1] + (dim, dim)).copy()

    def dv(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    return MetricField(dim, "euclidean", ev, dv, constant=True)


def conformal(dim: int, factor, grad: Callable | None = None) -> MetricField:
    """Metric ``c(x) * delta`` with a scalar conformal factor ``c``.

    ``factor`` is either a positive number or a batched callable; callables
    need their gradient ``grad`` (shape ``(..., dim)``).
    """
    eye = np.eye(dim)
    if np.isscalar(factor):
        c = float(factor)
        if c <= 0:
            raise ValueError("conformal factor must be positive")

        def ev(x):
            return np.broadcast_to(c * eye, x.shape[:-1] + (dim, dim)).copy()

        def dv(x):
            return np.zeros(x.shape[:-1] + (dim, dim, dim))

        return MetricField(dim, "conformal", ev, dv, constant=True, params={"factor": c})

    if grad is None:
        raise ValueError("a non-constant conformal factor needs its gradient")

    def ev(x):
        return np.asarray(factor(x))[..., None, None] * eye

    def dv(x):
        return np.asarray(grad(x))[..., :, None, None] * eye

    return MetricField(dim, "conformal", ev, dv)


def polar(r_min: float = 1e-3) -> MetricField:
    """Plane polar chart ``(r, theta)`` with metric ``diag(1, r^2)``."""

    def domain(x):
        if np.any(x[..., 0] < r_min):
            raise DomainError(f"polar chart requires r >= {r_min}")

    def ev(x):
        r = x[..., 0]
        m = np.zeros(x.shape[:-1] + (2, 2))
        m[..., 0, 0] = 1.0
        m[..., 1, 1] = r * r
        return m

    def dv(x):
        d = np.zeros(x.shape[:-1] + (2, 2, 2))
        d[..., 0, 1, 1] = 2.0 * x[..., 0]
        return d

    return MetricField(2, "polar", ev, dv, domain=domain, params={"r_min": r_min})


def table_metric(axes, values, step: float | None = None) -> MetricField:
    """Metric interpolated (cubic) from nodal components on a tensor grid.

    Derivatives use fourth-order central differences with step
    ``step`` (default ``1e-5`` times the chart scale).
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    dim = len(axes)
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(len(a) for a in axes) + (dim, dim):
        raise ValueError("table values must have shape (*nodes, dim, dim)")
    if not np.allclose(values, np.swapaxes(values, -1, -2)):
        raise ValueError("table metric components must be symmetric")
    method = "cubic" if all(len(a) >= 4 for a in axes) else "linear"
    # direct solve: the default iterative spline fit stops near 1e-6 relative error
    extra = {"solver": spsolve} if method == "cubic" else {}
    interp = RegularGridInterpolator(axes, values.reshape(values.shape[:dim] + (dim * dim,)),
                                     method=method, bounds_error=False, fill_value=None, **extra)
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    scale = float(np.max(hi - lo))
    h = 1e-5 * scale if step is None else float(step)

    def domain(x):
        if np.any(x < lo - 1e-12 * scale) or np.any(x > hi + 1e-12 * scale):
            raise DomainError("point outside the tabulated metric grid")

    def ev(x):
        flat = x.reshape(-1, dim)
        m = interp(flat).reshape(x.shape[:-1] + (dim, dim))
        return 0.5 * (m + np.swapaxes(m, -1, -2))

    def dv(x):
        out = np.empty(x.shape[:-1] + (dim, dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            out[..., k, :, :] = (-ev(x + 2 * e) + 8 * ev(x + e) - 8 * ev(x - e) + ev(x - 2 * e)) / (12 * h)
        return out

    return MetricField(dim, "user_table", ev, dv, domain=domain, params={"step": h})


def load_metric_table(path) -> MetricField:
    """Read a metric table file.

    Format (whitespace separated, ``#`` starts a comment)::

        dim 2
        axis 0.5 2.0 16      # min max count, one line per chart axis
        axis 0.0 1.0 8
        g11 g12 g21 g22      # one row per node, first axis slowest

    Rows hold the row-major metric components.
    """
    dim = None
    axes = []
    rows = []
    step = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "dim":
            dim = int(rest[0])
        elif head == "axis":
            lo, hi, count = float(rest[0]), float(rest[1]), int(rest[2])
            axes.append(np.linspace(lo, hi, count))
        elif head == "step":
            step = float(rest[0])
        else:
            rows.append([float(v) for v in line.split()])
    if dim is None or len(axes) != dim:
        raise ValueError("metric table needs a 'dim' line and one 'axis' line per dimension")
    shape = tuple(len(a) for a in axes)
    data = np.asarray(rows, dtype=float)
    if data.shape != (int(np.prod(shape)), dim * dim):
        raise ValueError(f"expected {int(np.prod(shape))} rows of {dim * dim} components, got {data.shape}")
    return table_metric(axes, data.reshape(shape + (dim, dim)), step=step)


def write_metric_table(path, axes, values):
    """Write nodal metric components in the format read by :func:`load_metric_table`."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    dim = len(axes)
    lines = [f"dim {dim}"]
    lines += [f"axis {a[0]:.17g} {a[-1]:.17g} {len(a)}" for a in axes]
    for row in np.asarray(values, dtype=float).reshape(-1, dim * dim):
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def christoffel(metric: MetricField, x) -> np.ndarray:
    """Christoffel symbols ``gamma[..., c, a, b]`` of the Levi-Civita connection.

    ``gamma^c_ab = 1/2 g^cd (d_b g_ad + d_a g_bd - d_d g_ab)``.
    """
    ginv = metric.inverse(x)
    dg = metric.deriv(x)
    lowered = (np.einsum("...bad->...abd", dg) + dg - np.einsum("...dab->...abd", dg))
    return 0.5 * np.einsum("...cd,...abd->...cab", ginv, lowered)


def metric_det_sqrt(metric: MetricField, x) -> np.ndarray:
    m = metric.checked(x)
    return np.sqrt(sm.det(m))


def covariant_accel(metric: MetricField, y, ydot, yddot) -> np.ndarray:
    """Covariant time derivative ``yddot^b + gamma^b_ac ydot^a ydot^c``."""
    ydot = np.asarray(ydot, dtype=float)
    yddot = np.asarray(yddot, dtype=float)
    if metric.constant:
        metric.checked(y)
        return yddot.copy()
    gam = christoffel(metric, y)
    return yddot + np.einsum("...bac,...a,...c->...b", gam, ydot, ydot)
