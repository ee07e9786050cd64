"""Signed-distance-field colliders.

Each collider answers vectorized ``distance`` (negative inside) and
``gradient`` queries in plain numpy; :func:`signed_distance` lifts a query
onto an autodiff tape using the collider's own gradient as the
vector-Jacobian product.  Gradients are analytic where the shape allows and
central differences for sampled grids.

Collider sets are described by a small text format, one shape per line::

    sphere  cx cy cz  radius
    capsule ax ay az  bx by bz  radius
    plane   nx ny nz  offset
    box     cx cy cz  hx hy hz
    torus   cx cy cz  axx axy axz  major_radius minor_radius
    grid    relative/path/to/file.sdfgrid

Multiple lines form an implicit union.  Grid files are binary: the magic
``SDFGRID1``, origin (3 x f8), spacing (f8), dims (3 x u4), then
``nx*ny*nz`` little-endian f8 values in C order (z fastest).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad

GRID_MAGIC = b"SDFGRID1"


class ColliderError(ValueError):
    """Raised for malformed collider description files."""


class Collider:
    """Base signed-distance shape; subclasses implement ``distance``."""

    def distance(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Sphere(Collider):
    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(radius)

    def distance(self, points):
        return np.linalg.norm(points - self.center, axis=-1) - self.radius

    def gradient(self, points):
        d = points - self.center
        return _normalized(d)


class Plane(Collider):
    """Half space; ``distance > 0`` on the side the normal points to."""

    def __init__(self, normal, offset: float):
        n = np.asarray(normal, dtype=np.float64).reshape(3)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def distance(self, points):
        return points @ self.normal - self.offset

    def gradient(self, points):
        return np.broadcast_to(self.normal, points.shape).copy()


class Capsule(Collider):
    def __init__(self, a, b, radius: float):
        self.a = np.asarray(a, dtype=np.float64).reshape(3)
        self.b = np.asarray(b, dtype=np.float64).reshape(3)
        self.radius = float(radius)

    def _closest(self, points):
        ab = self.b - self.a
        t = (points - self.a) @ ab / max(ab @ ab, 1e-300)
        t = np.clip(t, 0.0, 1.0)
        return self.a + t[:, None] * ab

    def distance(self, points):
        return np.linalg.norm(points - self._closest(points), axis=-1) - self.radius

    def gradient(self, points):
        return _normalized(points - self._closest(points))


class Box(Collider):
    def __init__(self, center, half_extents):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(half_extents, dtype=np.float64).reshape(3)

    def distance(self, points):
        q = np.abs(points - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def gradient(self, points):
        p = points - self.center
        q = np.abs(p) - self.half_extents
        sign = np.where(p >= 0.0, 1.0, -1.0)
        outside_vec = np.maximum(q, 0.0) * sign
        out_norm = np.linalg.norm(outside_vec, axis=-1)
        grad = np.zeros_like(points)
        out_mask = out_norm > 0.0
        grad[out_mask] = outside_vec[out_mask] / out_norm[out_mask, None]
        # Inside: move along the axis with the least depth.
        in_mask = ~out_mask
        if np.any(in_mask):
            axis = q[in_mask].argmax(axis=-1)
            rows = np.flatnonzero(in_mask)
            grad[rows, axis] = sign[rows, axis]
        return grad


class Torus(Collider):
    def __init__(self, center, axis, major_radius: float, minor_radius: float):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        a = np.asarray(axis, dtype=np.float64).reshape(3)
        self.axis = a / np.linalg.norm(a)
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def _tube_vector(self, points):
        p = points - self.center
        h = p @ self.axis
        radial = p - h[:, None] * self.axis
        rho = np.linalg.norm(radial, axis=-1)
        ring_dir = np.divide(radial, rho[:, None], out=np.zeros_like(radial), where=rho[:, None] > 0)
        ring_point = self.major_radius * ring_dir
        return p - ring_point

    def distance(self, points):
        return np.linalg.norm(self._tube_vector(points), axis=-1) - self.minor_radius

    def gradient(self, points):
        return _normalized(self._tube_vector(points))


class Grid(Collider):
    """Trilinearly interpolated SDF samples on a regular grid.

    Queries outside the sampled volume add the Euclidean distance to the
    volume to the value at the clamped location.  Gradients are central
    differences with step ``1e-4 * spacing``.
    """

    def __init__(self, origin, spacing: float, values: np.ndarray):
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.spacing = float(spacing)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ColliderError("grid values must be a 3-d array")
        if not np.all(np.isfinite(self.values)):
            raise ColliderError("grid values must be finite")

    def _interp(self, points):
        dims = np.array(self.values.shape)
        local = (points - self.origin) / self.spacing
        clamped = np.clip(local, 0.0, dims - 1.0)
        outside = np.linalg.norm((local - clamped) * self.spacing, axis=-1)
        i0 = np.minimum(clamped.astype(np.int64), dims - 2)
        f = clamped - i0
        v = 0.0
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    v = v + wx * wy * wz * self.values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        return v + outside

    def distance(self, points):
        return self._interp(points)

    def gradient(self, points):
        step = 1e-4 * self.spacing
        grad = np.empty_like(points)
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            grad[:, axis] = (self._interp(points + offset) - self._interp(points - offset)) / (
                2.0 * step
            )
        return grad


class Union(Collider):
    """Pointwise minimum over member shapes; gradient follows the winner."""

    def __init__(self, parts):
        self.parts = list(parts)
        if not self.parts:
            raise ColliderError("union of zero colliders")

    def distance(self, points):
        return np.min([p.distance(points) for p in self.parts], axis=0)

    def gradient(self, points):
        dists = np.stack([p.distance(points) for p in self.parts])
        winner = dists.argmin(axis=0)
        grads = np.stack([p.gradient(points) for p in self.parts])
        return grads[winner, np.arange(len(points))]


def _normalized(d):
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.divide(d, n, out=np.zeros_like(d), where=n > 0)


def signed_distance(collider: Collider, points):
    """Query ``collider`` with tape-aware ``points`` ((m, 3) Var or array)."""
    if not isinstance(points, ad.Var):
        return collider.distance(np.asarray(points, dtype=np.float64))
    value = collider.distance(points.value)
    grad = collider.gradient(points.value)
    return ad.lift(value, (points,), lambda g: (g[:, None] * grad,))


def combine(colliders) -> Collider | None:
    """Collapse a collider list to a single shape (or None when empty)."""
    colliders = list(colliders)
    if not colliders:
        return None
    if len(colliders) == 1:
        return colliders[0]
    return Union(colliders)


def load_colliders(path) -> list[Collider]:
    """Parse a collider description file (see module docstring)."""
    path = Path(path)
    shapes: list[Collider] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            kind, args = fields[0].lower(), fields[1:]
            try:
                shapes.append(_parse_shape(kind, args, path.parent))
            except (ValueError, struct.error) as exc:
                raise ColliderError(f"{path}:{lineno}: {exc}") from exc
    if not shapes:
        raise ColliderError(f"{path}: no collider shapes found")
    return shapes


def _parse_shape(kind: str, args: list[str], base_dir: Path) -> Collider:
    if kind == "sphere":
        c = _floats(args, 4)
        return Sphere(c[:3], c[3])
    if kind == "capsule":
        c = _floats(args, 7)
        return Capsule(c[:3], c[3:6], c[6])
    if kind == "plane":
        c = _floats(args, 4)
        return Plane(c[:3], c[3])
    if kind == "box":
        c = _floats(args, 6)
        return Box(c[:3], c[3:6])
    if kind == "torus":
        c = _floats(args, 8)
        return Torus(c[:3], c[3:6], c[6], c[7])
    if kind == "grid":
        if len(args) != 1:
            raise ValueError("grid takes exactly one path argument")
        return load_grid(base_dir / args[0])
    raise ValueError(f"unknown collider kind {kind!r}")


def _floats(args: list[str], count: int) -> list[float]:
    if len(args) != count:
        raise ValueError(f"expected {count} numbers, got {len(args)}")
    return [float(a) for a in args]


def load_grid(path) -> Grid:
    """Read a binary ``.sdfgrid`` file (format in module docstring)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != GRID_MAGIC:
            raise ColliderError(f"{path}: bad magic {magic!r}")
        origin = struct.unpack("<3d", fh.read(24))
        (spacing,) = struct.unpack("<d", fh.read(8))
        dims = struct.unpack("<3I", fh.read(12))
        count = dims[0] * dims[1] * dims[2]
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ColliderError(f"{path}: truncated grid data")
        values = np.frombuffer(raw, dtype="<f8").reshape(dims)
    return Grid(origin, spacing, values)


def save_grid(grid: Grid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.spacing))
        fh.write(struct.pack("<3I", *grid.values.shape))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())
