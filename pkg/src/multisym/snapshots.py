"""CSV snapshots, JSON manifests and diagnostics streams.

Numbers are written with 17 significant digits so that they round-trip.
Only the manifest's ``metadata`` block carries wall-clock content.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .fields import SpaceTimeGrid

__all__ = ["write_snapshot", "read_snapshot", "write_cells", "read_cells", "write_json", "write_manifest",
           "jsonable"]


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_snapshot(path, grid: SpaceTimeGrid, phi) -> Path:
    """Nodal positions: one row per node with indices, reference coordinates and ``phi``."""
    path = Path(path)
    phi = np.asarray(phi, dtype=float)
    n = grid.n_space
    N = phi.shape[-1]
    X = grid.coords().reshape(-1, n)
    idx = np.indices(grid.nodes).reshape(n, -1).T
    header = [f"i{k}" for k in range(n)] + [f"x{k}" for k in range(n)] + [f"phi{a}" for a in range(N)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, x, p in zip(idx, X, phi.reshape(-1, N)):
            w.writerow([str(int(j)) for j in i] + [_fmt(v) for v in x] + [_fmt(v) for v in p])
    return path


def read_snapshot(path, grid: SpaceTimeGrid) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = [j for j, h in enumerate(header) if h.startswith("phi")]
    data = np.array([[float(r[j]) for j in cols] for r in body])
    return data.reshape(grid.nodes + (len(cols),))


def write_cells(path, grid: SpaceTimeGrid, values, name: str = "lam") -> Path:
    """Cell values, one row per cell with indices and center coordinates."""
    path = Path(path)
    n = grid.n_space
    xc = grid.cell_centers().reshape(-1, n)
    idx = np.indices(grid.cell_shape).reshape(n, -1).T
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{k}" for k in range(n)] + [f"x{k}" for k in range(n)] + [name])
        for i, x, v in zip(idx, xc, np.asarray(values, dtype=float).ravel()):
            w.writerow([str(int(j)) for j in i] + [_fmt(c) for c in x] + [_fmt(v)])
    return path


def read_cells(path, grid: SpaceTimeGrid) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[-1]) for r in rows]).reshape(grid.cell_shape)


def jsonable(obj):
    """Convert numpy scalars and arrays, recursively, for ``json.dump``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(path, body: dict) -> Path:
    """Manifest with a ``metadata`` block holding the creation time."""
    data = dict(body)
    data["metadata"] = {"created": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    return write_json(path, data)
