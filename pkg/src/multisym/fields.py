"""Space-time grids, configuration sections and their first-jet extension.

Node-centered fields are stored as arrays of shape ``(levels, *nodes, N)``.
Multipliers live on spatial cells, ``(levels, *cells)``. On periodic axes a
section may jump by a fixed vector across one period (``lift``), which is
how the identity map of a torus is represented.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import smallmat as sm
from .errors import ShapeError

__all__ = [
    "SpaceTimeGrid",
    "ConfigurationField",
    "JetSample",
    "torus_lift",
    "spatial_diff",
    "time_diff",
    "second_time_diff",
    "jet_field",
    "jet_extend",
    "regularity_check",
    "corner_offsets",
    "cell_corners",
    "cell_gradient",
    "cell_average",
    "cell_to_node_average",
    "cell_to_node_gradient",
]

REGULARITY_FLOOR = 1e-10


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on the reference body times a uniform time step.

    Periodic axes have ``nodes`` points on ``[min, max)``; fixed axes include
    both end points, which carry Dirichlet values.
    """

    extents: tuple
    nodes: tuple
    dt: float
    boundary: tuple

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        nodes = tuple(int(n) for n in self.nodes)
        bnd = tuple(str(b) for b in self.boundary)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "boundary", bnd)
        if not (len(ext) == len(nodes) == len(bnd)) or len(ext) not in (1, 2):
            raise ShapeError("extents, nodes and boundary must agree and describe 1 or 2 spatial axes")
        if any(n < 3 for n in nodes):
            raise ValueError("every axis needs at least 3 nodes")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if any(not b > a for a, b in ext):
            raise ValueError("extents must satisfy min < max")
        if any(b not in ("periodic", "fixed") for b in bnd):
            raise ValueError("boundary kinds are 'periodic' or 'fixed'")

    @property
    def n_space(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (n if kind == "periodic" else n - 1)
                         for (a, b), n, kind in zip(self.extents, self.nodes, self.boundary)])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.extents])

    def periodic(self, axis: int) -> bool:
        return self.boundary[axis] == "periodic"

    @property
    def cell_shape(self) -> tuple:
        return tuple(n if self.periodic(k) else n - 1 for k, n in enumerate(self.nodes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, k: int) -> np.ndarray:
        a = self.extents[k][0]
        return a + self.spacing[k] * np.arange(self.nodes[k])

    def coords(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.n_space)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        axes = [self.axis(k)[: self.cell_shape[k]] + 0.5 * self.spacing[k] for k in range(self.n_space)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def free_mask(self) -> np.ndarray:
        """True at nodes that are not Dirichlet boundary nodes."""
        mask = np.ones(self.nodes, dtype=bool)
        for k in range(self.n_space):
            if not self.periodic(k):
                idx = [slice(None)] * self.n_space
                idx[k] = 0
                mask[tuple(idx)] = False
                idx[k] = -1
                mask[tuple(idx)] = False
        return mask

    def interior(self) -> tuple:
        """Index tuple selecting the non-boundary nodes."""
        return tuple(slice(None) if self.periodic(k) else slice(1, -1) for k in range(self.n_space))

    def refined(self, factor: int = 2, time_factor: int | None = None) -> "SpaceTimeGrid":
        tf = factor if time_factor is None else time_factor
        nodes = tuple(n * factor if self.periodic(k) else (n - 1) * factor + 1
                      for k, n in enumerate(self.nodes))
        return replace(self, nodes=nodes, dt=self.dt / tf)

    def to_dict(self) -> dict:
        return {"extents": [list(e) for e in self.extents], "nodes": list(self.nodes),
                "dt": self.dt, "boundary": list(self.boundary)}


def torus_lift(grid: SpaceTimeGrid, n_fiber: int | None = None) -> np.ndarray:
    """Period jumps of the identity section: axis ``k`` shifts component ``k``."""
    N = grid.n_space if n_fiber is None else n_fiber
    lift = np.zeros((grid.n_space, N))
    for k in range(grid.n_space):
        if grid.periodic(k) and k < N:
            lift[k, k] = grid.lengths[k]
    return lift


@dataclass
class ConfigurationField:
    """Nodal section values per time level, with optional cell multipliers.

    Attributes
    ----------
    phi : ndarray, shape (levels, *nodes, N)
    lam : ndarray, shape (levels, *cells), optional
    lift : ndarray, shape (n_space, N)
        Jump of ``phi`` across one period of each periodic axis.
    t0 : float
        Time of level 0.
    """

    phi: np.ndarray
    lam: np.ndarray | None = None
    lift: np.ndarray | None = None
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.ndim < 3:
            raise ShapeError("phi must have shape (levels, *nodes, N)")
        n = self.phi.ndim - 2
        if self.lift is None:
            self.lift = np.zeros((n, self.N))
        self.lift = np.asarray(self.lift, dtype=float)
        if self.lift.shape != (n, self.N):
            raise ShapeError(f"lift must have shape {(n, self.N)}")
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=float)
            if self.lam.shape[0] != self.phi.shape[0]:
                raise ShapeError("lam must carry one entry per time level")

    @property
    def N(self) -> int:
        return self.phi.shape[-1]

    @property
    def n_levels(self) -> int:
        return self.phi.shape[0]

    def check(self, grid: SpaceTimeGrid):
        if self.phi.shape[1:-1] != grid.nodes:
            raise ShapeError(f"phi node shape {self.phi.shape[1:-1]} does not match grid {grid.nodes}")
        if self.lam is not None and self.lam.shape[1:] != grid.cell_shape:
            raise ShapeError(f"lam cell shape {self.lam.shape[1:]} does not match grid {grid.cell_shape}")
        return self

    def time(self, level: int, grid: SpaceTimeGrid) -> float:
        return self.t0 + level * grid.dt

    def push(self, phi_next, lam_next=None, window: int | None = None, dt: float = 0.0) -> "ConfigurationField":
        """Return a new field with one more level, keeping the last ``window`` levels.

        ``dt`` is needed to advance ``t0`` when old levels are dropped.
        """
        phi = np.concatenate([self.phi, np.asarray(phi_next, dtype=float)[None]], axis=0)
        lam = None
        if self.lam is not None or lam_next is not None:
            prev = self.lam if self.lam is not None else np.full((self.n_levels,) + np.shape(lam_next), np.nan)
            nxt = np.full(prev.shape[1:], np.nan) if lam_next is None else np.asarray(lam_next, dtype=float)
            lam = np.concatenate([prev, nxt[None]], axis=0)
        t0 = self.t0
        if window is not None and phi.shape[0] > window:
            drop = phi.shape[0] - window
            phi = phi[drop:]
            lam = None if lam is None else lam[drop:]
            t0 = t0 + drop * dt
        return ConfigurationField(phi, lam, self.lift.copy(), t0, dict(self.meta))

    def levels(self, start: int, stop: int, dt: float = 0.0) -> "ConfigurationField":
        lam = None if self.lam is None else self.lam[start:stop]
        return ConfigurationField(self.phi[start:stop], lam, self.lift.copy(), self.t0 + start * dt, dict(self.meta))


@dataclass
class JetSample:
    """Point of the first jet bundle (or of its multiplier extension).

    Fields may carry leading batch axes. ``v`` has shape ``(..., N, n+1)``;
    column 0 is the time derivative, columns ``1..n`` form the deformation
    gradient.
    """

    x: np.ndarray
    t: float
    y: np.ndarray
    v: np.ndarray
    lam: np.ndarray | float | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.v.shape[-2:] != (self.y.shape[-1], self.x.shape[-1] + 1):
            raise ShapeError(f"v must have trailing shape (N, n+1) = "
                             f"{(self.y.shape[-1], self.x.shape[-1] + 1)}, got {self.v.shape[-2:]}")
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=float)
        if self.beta is not None:
            self.beta = np.asarray(self.beta, dtype=float)

    @property
    def n(self) -> int:
        return self.x.shape[-1]

    @property
    def N(self) -> int:
        return self.y.shape[-1]

    @property
    def v0(self) -> np.ndarray:
        return self.v[..., 0]

    @property
    def F(self) -> np.ndarray:
        return self.v[..., 1:]

    def replace(self, **kw) -> "JetSample":
        return replace(self, **kw)

    def __getitem__(self, idx) -> "JetSample":
        lam = None if self.lam is None else self.lam[idx]
        beta = None if self.beta is None else self.beta[idx]
        return JetSample(self.x[idx], self.t, self.y[idx], self.v[idx], lam, beta)


def _take(a, axis, idx):
    sl = [slice(None)] * a.ndim
    sl[axis] = idx
    return a[tuple(sl)]


def _index(a, axis, idx):
    sl = [slice(None)] * a.ndim
    sl[axis] = idx
    return tuple(sl)


def spatial_diff(grid: SpaceTimeGrid, values, axis: int, lift=None) -> np.ndarray:
    """Second-order derivative along a spatial axis of a nodal array.

    ``values`` has the node axes first. Periodic axes wrap, adding ``lift``
    (broadcast against the trailing axes) across the seam; fixed axes use
    one-sided second-order stencils at the end nodes.
    """
    v = np.asarray(values, dtype=float)
    h = grid.spacing[axis]
    if grid.periodic(axis):
        fwd = np.roll(v, -1, axis=axis)
        bwd = np.roll(v, 1, axis=axis)
        if lift is not None and np.any(lift):
            fwd = fwd.copy()
            bwd = bwd.copy()
            fwd[_index(fwd, axis, -1)] += lift
            bwd[_index(bwd, axis, 0)] -= lift
        return (fwd - bwd) / (2 * h)
    out = np.empty_like(v)
    n = v.shape[axis]
    inner = (_take(v, axis, slice(2, n)) - _take(v, axis, slice(0, n - 2))) / (2 * h)
    out[_index(out, axis, slice(1, n - 1))] = inner
    # centered difference against a cubically extrapolated ghost node: the
    # leading error matches the interior stencil, so divergences stay O(h^2)
    c = (-4.0, 7.0, -4.0, 1.0) if n >= 4 else (-3.0, 4.0, -1.0)
    out[_index(out, axis, 0)] = sum(w * _take(v, axis, j) for j, w in enumerate(c)) / (2 * h)
    out[_index(out, axis, -1)] = -sum(w * _take(v, axis, -1 - j) for j, w in enumerate(c)) / (2 * h)
    return out


def time_diff(series, dt: float, level: int) -> np.ndarray:
    """Time derivative at ``level`` of an array with time as axis 0."""
    s = np.asarray(series, dtype=float)
    L = s.shape[0]
    if L < 2:
        raise ShapeError("at least 2 time levels are needed")
    if level < 0:
        level += L
    if not 0 <= level < L:
        raise IndexError(f"level {level} outside 0..{L - 1}")
    if 0 < level < L - 1:
        return (s[level + 1] - s[level - 1]) / (2 * dt)
    if L == 2:
        return (s[1] - s[0]) / dt
    if level == 0:
        return (-3 * s[0] + 4 * s[1] - s[2]) / (2 * dt)
    return (3 * s[-1] - 4 * s[-2] + s[-3]) / (2 * dt)


def second_time_diff(series, dt: float, level: int) -> np.ndarray:
    s = np.asarray(series, dtype=float)
    if level < 0:
        level += s.shape[0]
    if not 0 < level < s.shape[0] - 1:
        raise IndexError("second time difference needs a level with neighbours on both sides")
    return (s[level + 1] - 2 * s[level] + s[level - 1]) / dt ** 2


def jet_field(grid: SpaceTimeGrid, fld: ConfigurationField, level: int) -> JetSample:
    """First-jet extension at every node of one time level (batched sample)."""
    fld.check(grid)
    if level < 0:
        level += fld.n_levels
    if not 0 <= level < fld.n_levels:
        raise IndexError(f"level {level} outside 0..{fld.n_levels - 1}")
    phi = fld.phi
    y = phi[level]
    cols = [time_diff(phi, grid.dt, level)]
    for k in range(grid.n_space):
        cols.append(spatial_diff(grid, y, k, fld.lift[k]))
    v = np.stack(cols, axis=-1)
    lam = beta = None
    if fld.lam is not None:
        nodal = np.stack([cell_to_node_average(grid, fld.lam[i]) for i in range(fld.n_levels)])
        lam = nodal[level]
        grads = cell_to_node_gradient(grid, fld.lam[level])
        beta = np.concatenate([time_diff(nodal, grid.dt, level)[..., None], grads], axis=-1)
    return JetSample(grid.coords(), fld.time(level, grid), y, v, lam, beta)


def jet_extend(grid: SpaceTimeGrid, fld: ConfigurationField, node, level: int) -> JetSample:
    """First-jet extension at a single node."""
    node = tuple(np.atleast_1d(node).tolist())
    if len(node) != grid.n_space:
        raise IndexError("node index must have one entry per spatial axis")
    for i, n in zip(node, grid.nodes):
        if not -n <= i < n:
            raise IndexError(f"node index {node} outside grid {grid.nodes}")
    return jet_field(grid, fld, level)[node]


def regularity_check(sample: JetSample, floor: float = REGULARITY_FLOOR) -> bool:
    """True iff the spatial block of the jet has determinant above ``floor``."""
    if sample.N != sample.n:
        raise ShapeError("regularity is defined for n = N")
    return bool(np.all(sm.det(sample.F) > floor))


def corner_offsets(n: int):
    return list(itertools.product((0, 1), repeat=n))


def cell_corners(grid: SpaceTimeGrid, nodal, lift=None) -> np.ndarray:
    """Nodal values at the ``2**n`` corners of every cell, shape ``(2**n, *cells, ...)``."""
    v = np.asarray(nodal, dtype=float)
    out = []
    for off in corner_offsets(grid.n_space):
        a = v
        for k, o in enumerate(off):
            if grid.periodic(k):
                if o:
                    a = np.roll(a, -1, axis=k)
                    if lift is not None and np.any(lift[k]):
                        a = a.copy()
                        a[_index(a, k, -1)] += lift[k]
            else:
                a = _take(a, k, slice(o, o + grid.nodes[k] - 1))
        out.append(a)
    return np.stack(out)


def cell_gradient(grid: SpaceTimeGrid, nodal, lift=None) -> np.ndarray:
    """Cell-averaged spatial gradient, shape ``(*cells, ..., n)``.

    Along axis ``k`` this is the mean of the ``2**(n-1)`` edge differences.
    """
    corners = cell_corners(grid, nodal, lift)
    offs = np.array(corner_offsets(grid.n_space))
    cols = []
    for k in range(grid.n_space):
        w = np.where(offs[:, k] == 1, 1.0, -1.0) / (2 ** (grid.n_space - 1) * grid.spacing[k])
        cols.append(np.tensordot(w, corners, axes=(0, 0)))
    return np.stack(cols, axis=-1)


def cell_average(grid: SpaceTimeGrid, nodal, lift=None) -> np.ndarray:
    return cell_corners(grid, nodal, lift).mean(axis=0)


def _padded_cells(grid: SpaceTimeGrid, cellvals):
    """Cells with one ghost layer: wrapped on periodic axes, quadratically extrapolated on fixed ones."""
    c = np.asarray(cellvals, dtype=float)
    for k in range(grid.n_space):
        if grid.periodic(k):
            c = np.concatenate([_take(c, k, slice(-1, None)), c], axis=k)
        else:
            m = c.shape[k]
            w = (3.0, -3.0, 1.0) if m >= 3 else (2.0, -1.0) if m == 2 else (1.0,)
            first = sum(a * _take(c, k, slice(j, j + 1)) for j, a in enumerate(w))
            last = sum(a * _take(c, k, slice(m - 1 - j, m - j)) for j, a in enumerate(w))
            c = np.concatenate([first, c, last], axis=k)
    return c


def _node_views(grid: SpaceTimeGrid, cellvals):
    p = _padded_cells(grid, cellvals)
    views = {}
    for off in corner_offsets(grid.n_space):
        a = p
        for k, o in enumerate(off):
            a = _take(a, k, slice(o, o + grid.nodes[k]))
        views[off] = a
    return views


def cell_to_node_average(grid: SpaceTimeGrid, cellvals) -> np.ndarray:
    """Average of the cells around each node, second-order up to fixed boundaries."""
    return np.mean(list(_node_views(grid, cellvals).values()), axis=0)


def cell_to_node_gradient(grid: SpaceTimeGrid, cellvals) -> np.ndarray:
    """Nodal gradient of a cell field, shape ``(*nodes, ..., n)``.

    Second order except at fixed-boundary nodes, where it is one-sided.
    """
    views = _node_views(grid, cellvals)
    cols = []
    for k in range(grid.n_space):
        hi = [a for off, a in views.items() if off[k] == 1]
        lo = [a for off, a in views.items() if off[k] == 0]
        cols.append((np.mean(hi, axis=0) - np.mean(lo, axis=0)) / grid.spacing[k])
    return np.stack(cols, axis=-1)
