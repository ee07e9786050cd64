"""Energy potentials and nodal forces for quasi-static cloth.

Five composable terms are provided: edge-spring stretching, squared
dihedral-angle bending, gravity, signed-distance contact against colliders,
and radial-compression self-collision springs.  All terms are weighted by
barycentric areas from the rest configuration and normalized by the total
surface area, in CGS units (cm, g, s, erg, dyn).

Forces are the exact negative gradient of the scalar energy, obtained with
one reverse pass over the autodiff tape.  Every term accepts either a tape
variable or a plain array of positions, so energy-only queries skip the
tape entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .colliders import Collider, combine, signed_distance
from .mesh import AreaWeights, Mesh, compute_area_weights
from .spatial_hash import find_close_pairs

TERM_NAMES = ("stretch", "bend", "gravity", "contact", "self")

DEGENERATE_NORMAL_TOL = 1e-12


class EnergyError(ValueError):
    """Raised on degenerate geometry or invalid potential configuration."""


@dataclass
class MaterialParams:
    """Material and contact parameters.

    Defaults follow the quantitative-comparison setup: ``k_s = 1e4`` erg/cm^2,
    ``k_b = 10`` erg, ``rho = 0.0187`` g/cm^2, and a 2 mm collision margin.
    ``k_ec``/``k_sc`` default to ``k_s`` and the self-collision rest length
    ``R`` defaults (when ``None``) to twice the mean rest edge length of the
    evaluated mesh; neither choice is prescribed by the reference setup.
    """

    k_s: float = 1.0e4  # erg/cm^2
    k_b: float = 10.0  # erg
    k_ec: float = 1.0e4  # erg/cm^2
    k_sc: float = 1.0e4  # erg/cm^2
    rho: float = 0.0187  # g/cm^2
    g: float = 981.0  # cm/s^2
    R: float | None = None  # cm; None = 2 x mean rest edge length
    d: int = 2  # neighborhood-ring exclusion depth
    collision_margin: float = 0.2  # cm
    up_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("k_s", "k_b", "k_ec", "k_sc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be positive")
        if self.d < 1:
            raise ValueError("d must be >= 1")


@dataclass(frozen=True)
class ForceReport:
    """Total and per-term energies (erg) plus nodal forces (dyn)."""

    total: float
    term_energies: dict
    forces: np.ndarray  # (n, 3)
    pinned: np.ndarray  # (n,) bool

    @property
    def masked_forces(self) -> np.ndarray:
        """Forces with pinned rows zeroed; the view integrators consume."""
        out = self.forces.copy()
        out[self.pinned] = 0.0
        return out


def _resolve_up(up_axis) -> np.ndarray:
    up = np.asarray(up_axis, dtype=np.float64).reshape(3)
    return up / np.linalg.norm(up)


def _stretch(x, edges, rest_lengths, edge_area, total_area, k_s):
    d = ad.sub(ad.gather(x, edges[:, 0]), ad.gather(x, edges[:, 1]))
    stretch = ad.sub(ad.norm(d), rest_lengths)
    return ad.scale(ad.sum(ad.mul(edge_area, ad.square(stretch))), k_s / (2.0 * total_area))


def _bend(x, dihedrals, dihedral_edge_area, total_area, k_b):
    xr = ad.gather(x, dihedrals[:, 0])
    xs = ad.gather(x, dihedrals[:, 1])
    xp = ad.gather(x, dihedrals[:, 2])
    xq = ad.gather(x, dihedrals[:, 3])
    n1 = ad.cross(ad.sub(xs, xr), ad.sub(xp, xr))
    n2 = ad.cross(ad.sub(xq, xr), ad.sub(xs, xr))
    l1 = ad.norm(n1)
    l2 = ad.norm(n2)
    v1 = l1.value if isinstance(l1, ad.Var) else l1
    v2 = l2.value if isinstance(l2, ad.Var) else l2
    bad = np.flatnonzero((v1 <= DEGENERATE_NORMAL_TOL) | (v2 <= DEGENERATE_NORMAL_TOL))
    if bad.size:
        r, s = dihedrals[bad[0], 0], dihedrals[bad[0], 1]
        raise EnergyError(f"degenerate face normal in dihedral {bad[0]} (edge {r}-{s})")
    cos = ad.div(ad.dot(n1, n2), ad.mul(l1, l2))
    theta = ad.acos(cos)
    return ad.scale(
        ad.sum(ad.mul(dihedral_edge_area, ad.square(theta))), k_b / (2.0 * total_area)
    )


def _gravity(x, vertex_area, total_area, rho, g, up):
    height = ad.dot(x, np.broadcast_to(up, (1, 3)))
    return ad.scale(ad.sum(ad.mul(rho * vertex_area**2, height)), g / total_area)


def _contact(x, vertex_area, collider, k_ec, margin):
    sdf = signed_distance(collider, x)
    depth = ad.max0(ad.neg(ad.sub(sdf, margin)))
    depth_value = depth.value if isinstance(depth, ad.Var) else depth
    active_area = float(vertex_area[depth_value > 0.0].sum())
    if active_area == 0.0:
        return 0.0
    return ad.scale(ad.sum(ad.mul(vertex_area, depth)), k_ec / active_area)


def _self_collision(x, positions, vertex_area, rest_length, exclude, k_sc):
    pairs = find_close_pairs(positions, rest_length, exclude=exclude)
    if len(pairs) == 0:
        return 0.0
    d = ad.sub(ad.gather(x, pairs[:, 0]), ad.gather(x, pairs[:, 1]))
    compression = ad.max0(ad.sub(rest_length, ad.norm(d)))
    weight = vertex_area[pairs[:, 0]] + vertex_area[pairs[:, 1]]
    comp_value = compression.value if isinstance(compression, ad.Var) else compression
    active_area = float(weight[comp_value > 0.0].sum())
    if active_area == 0.0:
        return 0.0
    return ad.scale(ad.sum(ad.mul(weight, ad.square(compression))), k_sc / active_area)


@dataclass
class PotentialSet:
    """A choice of energy terms, material parameters, and colliders.

    ``bind`` attaches the set to a mesh, precomputing every rest-derived
    constant so that repeated evaluations during a solve only touch the
    current positions.
    """

    params: MaterialParams = field(default_factory=MaterialParams)
    terms: tuple = ("stretch", "bend")
    colliders: tuple = ()

    def __post_init__(self):
        unknown = set(self.terms) - set(TERM_NAMES)
        if unknown:
            raise ValueError(f"unknown energy terms: {sorted(unknown)}")
        self.terms = tuple(t for t in TERM_NAMES if t in self.terms)

    def bind(self, mesh: Mesh, weights: AreaWeights | None = None) -> "BoundPotentials":
        return BoundPotentials(mesh, self.params, self.terms, self.colliders, weights)

    def evaluate(self, mesh: Mesh, weights: AreaWeights | None = None) -> ForceReport:
        return self.bind(mesh, weights).evaluate()


class BoundPotentials:
    """Potentials bound to one mesh, with rest-derived constants cached."""

    def __init__(self, mesh, params, terms, colliders=(), weights=None):
        self.mesh = mesh
        self.params = params
        self.terms = tuple(terms)
        self.weights = weights if weights is not None else compute_area_weights(mesh)
        self.collider = combine(colliders)
        self.up = _resolve_up(params.up_axis)

        self.rest_lengths = mesh.edge_lengths(rest=True)
        if "stretch" in self.terms and np.any(self.rest_lengths <= 0.0):
            bad = int(np.flatnonzero(self.rest_lengths <= 0.0)[0])
            raise EnergyError(f"edge {bad} has zero rest length")
        if "contact" in self.terms and self.collider is None:
            raise EnergyError("contact term enabled but no collider given")

        edge_index = {(int(r), int(s)): i for i, (r, s) in enumerate(mesh.edges)}
        self.dihedral_edge_area = self.weights.edge_area[
            [edge_index[(int(r), int(s))] for r, s in mesh.dihedrals[:, :2]]
        ]

        self.rest_length_self = params.R
        if self.rest_length_self is None and "self" in self.terms:
            self.rest_length_self = 2.0 * float(self.rest_lengths.mean())
        self.exclude = (
            mesh.neighborhood_rings(params.d) if "self" in self.terms else None
        )

    def energy_terms(self, x) -> dict:
        """Per-term energies for tape variable or array positions ``x``."""
        p, w = self.params, self.weights
        positions = x.value if isinstance(x, ad.Var) else np.asarray(x)
        out = {}
        for term in self.terms:
            if term == "stretch":
                out[term] = _stretch(
                    x, self.mesh.edges, self.rest_lengths, w.edge_area, w.total_area, p.k_s
                )
            elif term == "bend":
                out[term] = _bend(
                    x, self.mesh.dihedrals, self.dihedral_edge_area, w.total_area, p.k_b
                )
            elif term == "gravity":
                out[term] = _gravity(x, w.vertex_area, w.total_area, p.rho, p.g, self.up)
            elif term == "contact":
                out[term] = _contact(
                    x, w.vertex_area, self.collider, p.k_ec, p.collision_margin
                )
            elif term == "self":
                out[term] = _self_collision(
                    x, positions, w.vertex_area, self.rest_length_self, self.exclude, p.k_sc
                )
        return out

    def total_energy(self, x):
        """Sum of enabled terms; Var if ``x`` is a Var, else a float."""
        total = 0.0
        for value in self.energy_terms(x).values():
            total = ad.add(total, value)
        return total

    def energy(self, positions=None):
        """No-gradient evaluation: ``(total, per-term dict)`` as floats."""
        x = self.mesh.positions if positions is None else np.asarray(positions)
        terms = {k: float(v) for k, v in self.energy_terms(x).items()}
        return float(np.sum(list(terms.values()))) if terms else 0.0, terms

    def evaluate(self, positions=None) -> ForceReport:
        """Energy and exact nodal forces at the current (or given) positions."""
        base = self.mesh.positions if positions is None else np.asarray(positions)
        tape = ad.Tape()
        x = tape.var(base)
        term_vars = self.energy_terms(x)
        term_energies = {
            k: float(v.value) if isinstance(v, ad.Var) else float(v)
            for k, v in term_vars.items()
        }
        total = 0.0
        for v in term_vars.values():
            total = ad.add(total, v)
        if isinstance(total, ad.Var):
            tape.backward(total)
            forces = -x.grad if x.grad is not None else np.zeros_like(base)
            total_value = float(total.value)
        else:
            forces = np.zeros_like(base)
            total_value = float(total)
        if not np.all(np.isfinite(forces)):
            raise EnergyError("non-finite forces; check for degenerate geometry")
        return ForceReport(total_value, term_energies, forces, self.mesh.pinned.copy())


def evaluate(mesh, weights, params, colliders=(), terms=("stretch", "bend")) -> ForceReport:
    """One-shot evaluation of the enabled terms on ``mesh``."""
    return BoundPotentials(mesh, params, terms, colliders, weights).evaluate()


def stretch_energy(mesh: Mesh, weights: AreaWeights, k_s: float) -> float:
    """Edge-spring energy (erg) at the mesh's current positions."""
    rest = mesh.edge_lengths(rest=True)
    if np.any(rest <= 0.0):
        raise EnergyError("zero rest length")
    return float(
        _stretch(mesh.positions, mesh.edges, rest, weights.edge_area, weights.total_area, k_s)
    )


def bend_energy(mesh: Mesh, weights: AreaWeights, k_b: float) -> float:
    """Squared-dihedral-angle energy (erg) at the current positions."""
    edge_index = {(int(r), int(s)): i for i, (r, s) in enumerate(mesh.edges)}
    a_d = weights.edge_area[[edge_index[(int(r), int(s))] for r, s in mesh.dihedrals[:, :2]]]
    return float(_bend(mesh.positions, mesh.dihedrals, a_d, weights.total_area, k_b))


def gravity_energy(
    mesh: Mesh, weights: AreaWeights, rho: float, g: float, up_axis=(0.0, 0.0, 1.0)
) -> float:
    """Gravitational potential (erg); increases with height along ``up_axis``."""
    return float(
        _gravity(mesh.positions, weights.vertex_area, weights.total_area, rho, g, _resolve_up(up_axis))
    )


def external_contact_energy(
    mesh: Mesh,
    weights: AreaWeights,
    collider: Collider,
    k_ec: float,
    collision_margin: float = 0.0,
) -> float:
    """Penetration-depth contact penalty (erg) against ``collider``."""
    return float(
        _contact(mesh.positions, weights.vertex_area, collider, k_ec, collision_margin)
    )


def self_collision_energy(
    mesh: Mesh, weights: AreaWeights, k_sc: float, R: float, d: int = 2
) -> float:
    """Radial compression-spring energy (erg) between non-neighbor vertices."""
    exclude = mesh.neighborhood_rings(d)
    return float(
        _self_collision(mesh.positions, mesh.positions, weights.vertex_area, R, exclude, k_sc)
    )
