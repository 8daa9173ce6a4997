"""Batched determinant and inverse with closed forms for 1x1, 2x2 and 3x3.

LAPACK-backed ``numpy.linalg`` pays a per-matrix overhead that dominates
for large batches of tiny matrices.
"""

from __future__ import annotations

import numpy as np

__all__ = ["det", "inv"]


def det(m) -> np.ndarray:
    m = np.asarray(m)
    d = m.shape[-1]
    if d == 1:
        return m[..., 0, 0].copy()
    if d == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if d == 3:
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))
    return np.linalg.det(m)


def inv(m) -> np.ndarray:
    """Inverse; raises ``numpy.linalg.LinAlgError`` for exactly singular input."""
    m = np.asarray(m, dtype=float)
    d = m.shape[-1]
    if d > 3:
        return np.linalg.inv(m)
    D = det(m)
    if np.any(D == 0):
        raise np.linalg.LinAlgError("Singular matrix")
    if d == 1:
        return 1.0 / m
    if d == 2:
        out = np.empty_like(m)
        out[..., 0, 0] = m[..., 1, 1]
        out[..., 1, 1] = m[..., 0, 0]
        out[..., 0, 1] = -m[..., 0, 1]
        out[..., 1, 0] = -m[..., 1, 0]
        return out / D[..., None, None]
    cof = np.empty_like(m)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != j]
            c = [k for k in range(3) if k != i]
            cof[..., i, j] = (m[..., r[0], c[0]] * m[..., r[1], c[1]]
                              - m[..., r[0], c[1]] * m[..., r[1], c[0]]) * (-1) ** (i + j)
    return cof / D[..., None, None]
