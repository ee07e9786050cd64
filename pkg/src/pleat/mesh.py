"""Triangle-mesh data model: topology, area weights, OBJ I/O, subdivision,
and patch extraction with boundary pinning.

Positions are stored in centimeters as ``(n, 3)`` float64 arrays.  A mesh is
immutable after construction except for ``positions``; all derived topology
(edges, dihedral elements) and the rest configuration are fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Raised for invalid topology or malformed mesh files."""


def build_topology(triangles, n: int):
    """Derive unique edges and dihedral elements from a triangle list.

    Parameters
    ----------
    triangles : (m, 3) array_like of int
        Vertex-index triples; every index must be < ``n`` and the three
        indices of a triangle distinct.
    n : int
        Vertex count.

    Returns
    -------
    edges : (E, 2) ndarray
        Unique undirected edges as ``(r, s)`` with ``r < s``, sorted
        lexicographically.
    dihedrals : (D, 4) ndarray
        One row ``(r, s, p, q)`` per interior edge ``(r, s)``: ``p`` and
        ``q`` are the opposite vertices of its two incident triangles, in
        triangle-list order.

    Raises
    ------
    MeshError
        If an index is out of range, a triangle is degenerate, or an edge is
        incident to more than two triangles (non-manifold input is rejected,
        not repaired).
    """
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise MeshError(f"triangle index out of range for {n} vertices")
    incident: dict[tuple[int, int], list[int]] = {}
    for t, (i, j, k) in enumerate(triangles):
        if i == j or j == k or i == k:
            raise MeshError(f"triangle {t} has repeated vertex indices {(i, j, k)}")
        for a, b, c in ((i, j, k), (j, k, i), (i, k, j)):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            opp = incident.setdefault(key, [])
            if len(opp) == 2:
                raise MeshError(
                    f"non-manifold edge {key}: incident to more than two triangles"
                )
            opp.append(int(c))
    keys = sorted(incident)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    dihedrals = np.array(
        [(r, s, opp[0], opp[1]) for (r, s) in keys if len(opp := incident[(r, s)]) == 2],
        dtype=np.int64,
    ).reshape(-1, 4)
    return edges, dihedrals


class Mesh:
    """Triangle mesh with current and rest configurations.

    Parameters
    ----------
    positions : (n, 3) array_like
        Current vertex positions (cm).
    triangles : (m, 3) array_like of int
        Triangle vertex indices.
    rest_positions : (n, 3) array_like, optional
        Rest configuration; defaults to a copy of ``positions``.
    pinned : (n,) array_like of bool, optional
        Fixed-boundary mask; defaults to all free.

    Attributes
    ----------
    edges : (E, 2) ndarray
        Unique edges ``(r, s)``, ``r < s``, lexicographically sorted.
    dihedrals : (D, 4) ndarray
        Interior edges with their two opposite vertices.
    """

    def __init__(self, positions, triangles, rest_positions=None, pinned=None):
        self.positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if rest_positions is None:
            self.rest_positions = self.positions.copy()
        else:
            self.rest_positions = np.array(rest_positions, dtype=np.float64).reshape(-1, 3)
        if len(self.rest_positions) != n:
            raise MeshError(
                f"rest configuration has {len(self.rest_positions)} vertices, expected {n}"
            )
        if pinned is None:
            self.pinned = np.zeros(n, dtype=bool)
        else:
            self.pinned = np.asarray(pinned, dtype=bool).reshape(n).copy()
        self.edges, self.dihedrals = build_topology(self.triangles, n)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def copy(self) -> "Mesh":
        return Mesh(self.positions, self.triangles, self.rest_positions, self.pinned)

    def triangle_areas(self, rest: bool = True) -> np.ndarray:
        """Per-triangle areas (cm^2), from the rest or current configuration."""
        x = self.rest_positions if rest else self.positions
        a, b, c = (x[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    def edge_lengths(self, rest: bool = True) -> np.ndarray:
        x = self.rest_positions if rest else self.positions
        d = x[self.edges[:, 0]] - x[self.edges[:, 1]]
        return np.linalg.norm(d, axis=-1)

    def vertex_neighbors(self) -> list[set[int]]:
        """Adjacency sets from the edge list."""
        adj: list[set[int]] = [set() for _ in range(self.n_vertices)]
        for r, s in self.edges:
            adj[r].add(int(s))
            adj[s].add(int(r))
        return adj

    def neighborhood_rings(self, rings: int) -> list[set[int]]:
        """For each vertex, the set of vertices within ``rings`` edge hops
        (excluding the vertex itself)."""
        adj = self.vertex_neighbors()
        out: list[set[int]] = []
        for v in range(self.n_vertices):
            seen = {v}
            frontier = {v}
            for _ in range(rings):
                frontier = {w for u in frontier for w in adj[u]} - seen
                seen |= frontier
            seen.discard(v)
            out.append(seen)
        return out


@dataclass(frozen=True)
class AreaWeights:
    """Barycentric area weights derived from the rest configuration.

    Both the per-vertex and the per-edge family sum to the total surface
    area; one third of each incident triangle's rest area is assigned to
    every vertex and to every edge of that triangle.
    """

    vertex_area: np.ndarray  # (n,) cm^2
    edge_area: np.ndarray  # (E,) cm^2
    total_area: float  # cm^2


def compute_area_weights(mesh: Mesh) -> AreaWeights:
    """Compute :class:`AreaWeights` for ``mesh`` from rest geometry.

    Raises
    ------
    MeshError
        If any rest triangle has zero area.
    """
    areas = mesh.triangle_areas(rest=True)
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise MeshError(f"triangle {bad[0]} has zero rest area")
    third = areas / 3.0
    vertex_area = np.zeros(mesh.n_vertices)
    np.add.at(vertex_area, mesh.triangles, third[:, None])

    edge_index = {(int(r), int(s)): i for i, (r, s) in enumerate(mesh.edges)}
    edge_area = np.zeros(len(mesh.edges))
    tri = mesh.triangles
    for a, b in ((0, 1), (1, 2), (0, 2)):
        u = np.minimum(tri[:, a], tri[:, b])
        v = np.maximum(tri[:, a], tri[:, b])
        idx = np.fromiter(
            (edge_index[(int(i), int(j))] for i, j in zip(u, v)), dtype=np.int64, count=len(tri)
        )
        np.add.at(edge_area, idx, third)
    return AreaWeights(vertex_area, edge_area, float(areas.sum()))


def subdivide_midpoint(mesh: Mesh, levels: int) -> Mesh:
    """Subdivide each triangle into four using edge midpoints, ``levels`` times.

    Current and rest positions are linearly interpolated; a midpoint is
    pinned only when both of its edge endpoints are pinned.  Two levels
    multiply the triangle count by 16.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    out = mesh
    for _ in range(levels):
        out = _subdivide_once(out)
    return out if levels else mesh.copy()


def _subdivide_once(mesh: Mesh) -> Mesh:
    positions = list(mesh.positions)
    rest = list(mesh.rest_positions)
    pinned = list(mesh.pinned)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        m = midpoint.get(key)
        if m is None:
            m = midpoint[key] = len(positions)
            positions.append(0.5 * (positions[i] + positions[j]))
            rest.append(0.5 * (rest[i] + rest[j]))
            pinned.append(pinned[i] and pinned[j])
        return m

    faces = np.empty((4 * len(mesh.triangles), 3), dtype=np.int64)
    for t, (i, j, k) in enumerate(mesh.triangles):
        i, j, k = int(i), int(j), int(k)
        ij, jk, ki = mid(i, j), mid(j, k), mid(k, i)
        faces[4 * t : 4 * t + 4] = ((i, ij, ki), (ij, j, jk), (ki, jk, k), (ij, jk, ki))
    return Mesh(np.array(positions), faces, np.array(rest), np.array(pinned))


def extract_patch(mesh: Mesh, seed_vertex: int, rings: int):
    """Cut out the sub-mesh within ``rings`` breadth-first hops of a seed.

    Returns the patch (a valid :class:`Mesh`) whose ``pinned`` mask marks
    the patch's topological boundary vertices, plus the indices of the kept
    vertices in the parent mesh.

    Raises
    ------
    MeshError
        If the seed is out of range or no triangle survives.
    """
    if not 0 <= seed_vertex < mesh.n_vertices:
        raise MeshError(f"seed vertex {seed_vertex} out of range")
    if rings < 1:
        raise ValueError("rings must be >= 1")
    adj = mesh.vertex_neighbors()
    keep = {int(seed_vertex)}
    frontier = set(keep)
    for _ in range(rings):
        frontier = {w for u in frontier for w in adj[u]} - keep
        keep |= frontier
    tri_mask = np.array([all(int(v) in keep for v in t) for t in mesh.triangles])
    tris = mesh.triangles[tri_mask]
    if len(tris) == 0:
        raise MeshError("patch is empty: no triangle has all vertices within reach")
    used = np.unique(tris)
    remap = {int(v): i for i, v in enumerate(used)}
    new_tris = np.array([[remap[int(v)] for v in t] for t in tris], dtype=np.int64)
    patch = Mesh(
        mesh.positions[used],
        new_tris,
        mesh.rest_positions[used],
        np.zeros(len(used), dtype=bool),
    )
    # Boundary = endpoints of edges incident to exactly one patch triangle.
    counts: dict[tuple[int, int], int] = {}
    for i, j, k in new_tris:
        for a, b in ((i, j), (j, k), (i, k)):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            counts[key] = counts.get(key, 0) + 1
    for (a, b), c in counts.items():
        if c == 1:
            patch.pinned[a] = True
            patch.pinned[b] = True
    return patch, used


def load_obj(path, rest_path=None) -> Mesh:
    """Load an ASCII OBJ mesh with triangular faces.

    Face records may carry ``v/vt/vn`` slashes; only the vertex index is
    used.  If ``rest_path`` is given, rest positions are read from that
    companion OBJ (its topology must match); otherwise the loaded positions
    double as the rest configuration.
    """
    positions, triangles = _parse_obj(path)
    rest = None
    if rest_path is not None:
        rest, rest_tris = _parse_obj(rest_path)
        if len(rest) != len(positions) or not np.array_equal(rest_tris, triangles):
            raise MeshError(f"rest mesh {rest_path} does not match topology of {path}")
    return Mesh(positions, triangles, rest)


def _parse_obj(path):
    positions = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            tag = fields[0]
            if tag == "v":
                if len(fields) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    positions.append([float(c) for c in fields[1:4]])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: malformed vertex: {exc}") from exc
            elif tag == "f":
                if len(fields) != 4:
                    raise MeshError(
                        f"{path}:{lineno}: only triangular faces are supported "
                        f"(got {len(fields) - 1} corners)"
                    )
                try:
                    idx = [int(c.split("/")[0]) for c in fields[1:]]
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: malformed face: {exc}") from exc
                if any(i <= 0 for i in idx):
                    raise MeshError(f"{path}:{lineno}: face indices must be positive")
                faces.append([i - 1 for i in idx])
            # other record types (vn, vt, s, o, ...) are ignored
    if not positions:
        raise MeshError(f"{path}: no vertices found")
    return np.array(positions, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_obj(mesh: Mesh, path) -> None:
    """Write positions and faces as ASCII OBJ (six decimal digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.positions:
            fh.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"f {i + 1} {j + 1} {k + 1}\n")


def load_pin_mask(path, n: int) -> np.ndarray:
    """Read a pin mask: one vertex index per line."""
    mask = np.zeros(n, dtype=bool)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                idx = int(stripped)
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: malformed vertex index") from exc
            if not 0 <= idx < n:
                raise MeshError(f"{path}:{lineno}: vertex index {idx} out of range")
            mask[idx] = True
    return mask


def save_pin_mask(mask, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx in np.flatnonzero(np.asarray(mask, dtype=bool)):
            fh.write(f"{idx}\n")


def grid_mesh(nx: int, ny: int, spacing: float = 1.0, alternate: bool = True) -> Mesh:
    """Flat rectangular grid of ``nx`` x ``ny`` quads in the z = 0 plane,
    each split into two triangles.

    With ``alternate`` the quad diagonals flip in a checkerboard pattern,
    which avoids a global directional bias in the triangulation.
    """
    xs = np.arange(nx + 1) * spacing
    ys = np.arange(ny + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    positions = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if alternate and (i + j) % 2:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    return Mesh(positions, np.array(tris, dtype=np.int64))
