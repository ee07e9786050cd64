"""Broad-phase proximity queries on a uniform spatial hash grid.

Candidate pairs come from a grid with cell size equal to the query radius
and a 27-cell neighborhood sweep; iteration is ordered by vertex index so
the resulting pair list is deterministic.
"""

from __future__ import annotations

import numpy as np


def find_close_pairs(positions, radius: float, exclude=None) -> np.ndarray:
    """All unordered vertex pairs strictly closer than ``radius``.

    Parameters
    ----------
    positions : (n, 3) array_like
        Vertex positions.
    radius : float
        Strict distance threshold; also the hash cell size.
    exclude : sequence of set of int, optional
        Per-vertex exclusion sets (e.g. topological neighborhoods); a pair
        ``(u, v)`` is dropped when ``v in exclude[u]``.

    Returns
    -------
    (m, 2) ndarray
        Pairs ``(u, v)`` with ``u < v``, sorted lexicographically.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)

    cells = np.floor(positions / radius).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i, key in enumerate(map(tuple, cells)):
        buckets.setdefault(key, []).append(i)

    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    r2 = radius * radius
    pairs = []
    for u in range(n):
        cx, cy, cz = cells[u]
        banned = exclude[u] if exclude is not None else ()
        for dx, dy, dz in offsets:
            for v in buckets.get((cx + dx, cy + dy, cz + dz), ()):
                if v <= u or v in banned:
                    continue
                d = positions[u] - positions[v]
                if d @ d < r2:
                    pairs.append((u, v))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    out = np.array(pairs, dtype=np.int64)
    return out[np.lexsort((out[:, 1], out[:, 0]))]
