"""
Stage 3: Discretization
Triangulated punctured sphere (the Gauss image of the truncated slab),
boundary circles, symmetry reduction, finite element operators, harmonic
trace lifting and chart derivative stencils
"""
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from stages.stage1_scherk import inverse_gauss_array, tangent_frame
from stages.stage2_transforms import GeometryCache, build_geometry_cache
from utils.errors import (
    DegenerateMeshError,
    InfeasibleMeshError,
    InvalidParameterError,
    MeshIOError,
    SingularOperatorError,
    SymmetryClassError,
)
from utils.meshio import read_obj, write_obj

PUNCTURE_CENTERS = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
])
BOUNDARY_NAMES = ('interior', 'c1', 'c2', 'c3', 'c4')
WARP_RADIUS = 0.25 * math.pi
MAX_ASPECT_RATIO = 50.0

# (character under R_xz: y -> -y, character under R_yz: x -> -x)
SYMMETRY_CLASSES: Dict[str, Optional[Tuple[int, int]]] = {
    'xz-inv-yz-anti': (1, -1),
    'xz-inv-yz-inv': (1, 1),
    'xz-anti-yz-inv': (-1, 1),
    'xz-anti-yz-anti': (-1, -1),
    'all': None,
}
SYMMETRIC_CLASS = 'xz-inv-yz-anti'


@dataclass
class Mesh:
    """Triangulation of the sphere minus four geodesic discs of radius phi0"""
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_tag: np.ndarray
    sym_maps: Dict[str, np.ndarray]
    phi0: float
    refinement: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def is_closed(self) -> bool:
        return self.phi0 == 0.0

    @property
    def interior(self) -> np.ndarray:
        return self.boundary_tag == 0

    @property
    def boundary(self) -> np.ndarray:
        return self.boundary_tag > 0

    def edges(self) -> np.ndarray:
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_nodes - len(self.edges()) + len(self.triangles)

    def boundary_nodes(self, circle: int) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag == circle)

    @cached_property
    def frames(self) -> Tuple[np.ndarray, np.ndarray]:
        return tangent_frame(self.nodes)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges()
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    @cached_property
    def surface_points(self) -> np.ndarray:
        """Slab coordinates (x, y, z) of every node"""
        if self.is_closed:
            raise InvalidParameterError("The closed sphere has no surface preimage at the punctures")
        return inverse_gauss_array(self.nodes)

    @cached_property
    def round_operator(self) -> 'LBOperator':
        return assemble_lb(self, 'round_sphere')

    @cached_property
    def derivatives(self) -> 'ChartDerivatives':
        return derivative_operators(self)

    def geometry(self, tau: float) -> GeometryCache:
        """Pulled geometry of the bent slab at every node (memoized per tau)"""
        cache = self.__dict__.setdefault('_geometry', {})
        key = float(tau)
        if key not in cache:
            if self.is_closed:
                raise InvalidParameterError("Geometry needs a punctured mesh")
            cache[key] = build_geometry_cache(self.nodes, self.frames, key)
        return cache[key]


@dataclass
class LBOperator:
    """Galerkin stiffness and mass of the Laplace-Beltrami operator"""
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    lumped: np.ndarray
    metric_mode: str = 'round_sphere'
    tau: float = 0.0

    def lumped_laplacian(self) -> sp.csr_matrix:
        """Nodal Laplacian -M_L^{-1} K"""
        return sp.diags(-1.0 / self.lumped) @ self.stiffness


# Mesh construction

def _octahedron_lattice(refinement: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sphere points of the subdivided octahedron, one lattice per octant"""
    n = 2 ** refinement
    index: Dict[Tuple[int, int, int], int] = {}
    nodes, triangles = [], []

    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                local = {}
                for i in range(n + 1):
                    for j in range(n + 1 - i):
                        k = n - i - j
                        key = (sx * i, sy * j, sz * k)
                        if key not in index:
                            p = np.array([
                                sx * math.sin(0.5 * math.pi * i / n),
                                sy * math.sin(0.5 * math.pi * j / n),
                                sz * math.sin(0.5 * math.pi * k / n),
                            ])
                            index[key] = len(nodes)
                            nodes.append(p / np.linalg.norm(p))
                        local[(i, j)] = index[key]
                for i in range(n):
                    for j in range(n - i):
                        triangles.append([local[(i, j)], local[(i + 1, j)], local[(i, j + 1)]])
                        if i + j <= n - 2:
                            triangles.append([local[(i + 1, j)], local[(i + 1, j + 1)], local[(i, j + 1)]])

    nodes = np.array(nodes)
    triangles = np.array(triangles, dtype=np.int64)
    return nodes, _orient_outward(nodes, triangles)


def _orient_outward(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.sum(normal * p.mean(axis=1), axis=1) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _reflection_permutation(nodes: np.ndarray, axis: int) -> np.ndarray:
    mirrored = nodes.copy()
    mirrored[:, axis] *= -1.0
    distance, perm = cKDTree(nodes).query(mirrored)
    if distance.max() > 1e-8:
        raise InfeasibleMeshError(f"Node set is not closed under reflection of axis {axis} (gap {distance.max():.2e})")
    return perm.astype(np.int64)


def _symmetrize(nodes: np.ndarray, perm_xz: np.ndarray, perm_yz: np.ndarray) -> np.ndarray:
    """Average every node with its mirror images so both reflections hold bitwise"""
    for axis, perm in ((1, perm_xz), (0, perm_yz)):
        mirrored = nodes[perm].copy()
        mirrored[:, axis] *= -1.0
        nodes = 0.5 * (nodes + mirrored)
    return nodes / np.linalg.norm(nodes, axis=1, keepdims=True)


def _puncture_frame(center: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if abs(center[2]) > 0.5:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    return np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])


def _polar(nodes: np.ndarray, center: np.ndarray):
    f1, f2 = _puncture_frame(center)
    rho = np.arctan2(np.linalg.norm(np.cross(nodes, center), axis=1), nodes @ center)
    alpha = np.arctan2(nodes @ f2, nodes @ f1)
    return rho, alpha, f1, f2


def build_closed_mesh(refinement: int) -> Mesh:
    """Uniformly refined octahedral sphere, used to validate the operators"""
    if refinement < 0:
        raise InvalidParameterError(f"refinement must be >= 0, got {refinement}")
    nodes, triangles = _octahedron_lattice(refinement)
    perm_xz = _reflection_permutation(nodes, 1)
    perm_yz = _reflection_permutation(nodes, 0)
    nodes = _symmetrize(nodes, perm_xz, perm_yz)
    return Mesh(
        nodes=nodes, triangles=triangles, boundary_tag=np.zeros(len(nodes), dtype=np.int64),
        sym_maps={'xz': perm_xz, 'yz': perm_yz}, phi0=0.0, refinement=refinement,
    )


def build_mesh(phi0: float, refinement: int) -> Mesh:
    """
    Mesh of S^2 minus the four discs of radius phi0

    Combinatorial rings around each octahedron vertex are removed up to the
    ring whose mean radius is closest to phi0; that ring is pulled radially
    onto the circle and the warp fades out linearly at WARP_RADIUS.

    Args:
        phi0: Puncture radius in (0, pi/4)
        refinement: Octahedron subdivision level (2^refinement segments per edge)

    Returns:
        Mesh with boundary tags c1..c4 and exact mirror symmetry
    """
    if not 0.0 < phi0 < 0.25 * math.pi:
        raise InfeasibleMeshError(f"phi0 must lie in (0, pi/4) so the punctures stay disjoint, got {phi0}")
    if refinement < 0:
        raise InvalidParameterError(f"refinement must be >= 0, got {refinement}")

    nodes, triangles = _octahedron_lattice(refinement)
    graph = sp.csr_matrix(
        (np.ones(3 * len(triangles)),
         (triangles.ravel(), np.roll(triangles, -1, axis=1).ravel())),
        shape=(len(nodes), len(nodes)),
    )

    keep = np.ones(len(nodes), dtype=bool)
    tags = np.zeros(len(nodes), dtype=np.int64)
    warped = nodes.copy()

    for circle, center in enumerate(PUNCTURE_CENTERS, start=1):
        apex = int(np.argmax(nodes @ center))
        hops = shortest_path(graph, directed=False, unweighted=True, indices=apex)
        rho, alpha, f1, f2 = _polar(nodes, center)

        best_ring, best_gap = None, math.inf
        for ring in range(1, int(hops[np.isfinite(hops)].max()) + 1):
            members = hops == ring
            if rho[members].max() >= WARP_RADIUS:
                break
            gap = abs(rho[members].mean() - phi0)
            if gap < best_gap:
                best_ring, best_gap = ring, gap
        if best_ring is None:
            raise InfeasibleMeshError(f"refinement {refinement} too coarse to carve a puncture of radius {phi0}")

        ring_nodes = hops == best_ring
        keep &= hops >= best_ring
        tags[ring_nodes] = circle

        order = np.argsort(alpha[ring_nodes])
        ring_alpha, ring_rho = alpha[ring_nodes][order], rho[ring_nodes][order]
        zone = (hops >= best_ring) & (rho < WARP_RADIUS)
        radius = np.interp(alpha[zone], ring_alpha, ring_rho, period=2.0 * math.pi)
        new_rho = phi0 + (rho[zone] - radius) * (WARP_RADIUS - phi0) / (WARP_RADIUS - radius)
        direction = np.cos(alpha[zone])[:, None] * f1 + np.sin(alpha[zone])[:, None] * f2
        warped[zone] = np.cos(new_rho)[:, None] * center + np.sin(new_rho)[:, None] * direction

    renumber = -np.ones(len(nodes), dtype=np.int64)
    renumber[keep] = np.arange(keep.sum())
    kept_triangles = triangles[np.all(keep[triangles], axis=1)]
    nodes = warped[keep]
    triangles = renumber[kept_triangles]

    perm_xz = _reflection_permutation(nodes, 1)
    perm_yz = _reflection_permutation(nodes, 0)
    nodes = _symmetrize(nodes, perm_xz, perm_yz)

    mesh = Mesh(
        nodes=nodes, triangles=triangles, boundary_tag=tags[keep],
        sym_maps={'xz': perm_xz, 'yz': perm_yz}, phi0=float(phi0), refinement=refinement,
    )
    print(f"  ✓ Mesh phi0={phi0:.4f} r={refinement}: {mesh.n_nodes} nodes, {len(triangles)} triangles")
    return mesh


def check_mesh(mesh: Mesh, tol: float = 1e-10) -> Tuple[bool, list]:
    """
    Structural checks of a mesh

    Returns:
        Tuple of (is_valid, list_of_issues)
    """
    issues = []
    radius_error = np.abs(np.linalg.norm(mesh.nodes, axis=1) - 1.0).max()
    if radius_error > 1e-14:
        issues.append(f"nodes off the unit sphere by {radius_error:.2e}")

    for circle in range(1, 5):
        ids = mesh.boundary_nodes(circle)
        if not mesh.is_closed:
            if len(ids) == 0:
                issues.append(f"boundary circle c{circle} is empty")
                continue
            rho = np.arccos(np.clip(mesh.nodes[ids] @ PUNCTURE_CENTERS[circle - 1], -1.0, 1.0))
            error = np.abs(rho - mesh.phi0).max()
            if error > tol:
                issues.append(f"c{circle} nodes off the circle by {error:.2e}")

    triangle_set = {tuple(sorted(t)) for t in mesh.triangles.tolist()}
    for name, perm in mesh.sym_maps.items():
        if not np.array_equal(perm[perm], np.arange(mesh.n_nodes)):
            issues.append(f"sym_map {name} is not an involution")
        if {tuple(sorted(t)) for t in perm[mesh.triangles].tolist()} != triangle_set:
            issues.append(f"sym_map {name} does not map triangles to triangles")

    expected = 2 if mesh.is_closed else -2
    if mesh.euler_characteristic() != expected:
        issues.append(f"Euler characteristic {mesh.euler_characteristic()} != {expected}")

    return len(issues) == 0, issues


# Finite elements

def triangle_gradients(nodes: np.ndarray, triangles: np.ndarray):
    p = nodes[triangles]
    edges = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    twice_area = np.linalg.norm(cross, axis=1)
    if np.any(twice_area <= 0):
        raise DegenerateMeshError(f"{int(np.sum(twice_area <= 0))} triangles have zero area")
    normal = cross / twice_area[:, None]
    grads = np.cross(normal[:, None, :], edges) / twice_area[:, None, None]

    lengths = np.linalg.norm(edges, axis=2)
    longest = lengths.max(axis=1)
    aspect = longest ** 2 / twice_area
    worst = int(np.argmax(aspect))
    if aspect[worst] > MAX_ASPECT_RATIO:
        raise DegenerateMeshError(
            f"triangle {worst} has aspect ratio {aspect[worst]:.1f} > {MAX_ASPECT_RATIO}"
        )
    return 0.5 * twice_area, grads


def _scatter(triangles: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _anisotropy(geometry: GeometryCache, frames) -> np.ndarray:
    """Ambient (3x3) tensors Q - I with Q = sqrt(det R) R^{-1}, R the relative metric"""
    R = geometry.g
    Q = np.sqrt(np.linalg.det(R))[:, None, None] * np.linalg.inv(R) - np.eye(2)[None]
    F = np.stack(frames, axis=2)
    return np.einsum('nia,nab,njb->nij', F, Q, F)


def assemble_lb(mesh: Mesh, metric_mode: str = 'round_sphere', tau: float = 0.0) -> LBOperator:
    """
    Piecewise-linear stiffness and mass matrices of the Laplace-Beltrami operator

    Args:
        mesh: Sphere mesh
        metric_mode: 'round_sphere', or 'sigma_pullback' for the metric of the
            bent slab pulled back to the sphere
        tau: Bending parameter for sigma_pullback

    Returns:
        LBOperator
    """
    area, grads = triangle_gradients(mesh.nodes, mesh.triangles)
    n = mesh.n_nodes
    base_mass = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

    if metric_mode == 'round_sphere':
        local_k = area[:, None, None] * np.einsum('tai,tbi->tab', grads, grads)
        weight = np.ones(len(area))
    elif metric_mode == 'sigma_pullback':
        geometry = mesh.geometry(tau)
        conductivity = np.eye(3)[None] + _anisotropy(geometry, mesh.frames)[mesh.triangles].mean(axis=1)
        local_k = area[:, None, None] * np.einsum('tai,tij,tbj->tab', grads, conductivity, grads)
        weight = np.sqrt(np.linalg.det(geometry.g))[mesh.triangles].mean(axis=1)
    else:
        raise InvalidParameterError(f"metric_mode must be 'round_sphere' or 'sigma_pullback', got {metric_mode}")

    local_m = (weight * area)[:, None, None] * base_mass[None]
    stiffness = _scatter(mesh.triangles, local_k, n)
    stiffness = 0.5 * (stiffness + stiffness.T)
    mass = _scatter(mesh.triangles, local_m, n)
    lumped = np.asarray(mass.sum(axis=1)).ravel()

    return LBOperator(stiffness=stiffness.tocsr(), mass=mass, lumped=lumped, metric_mode=metric_mode, tau=float(tau))


# Symmetry reduction

class SymmetricProjector:
    """
    Average over the reflections R_xz (y -> -y) and R_yz (x -> -x) with the
    characters of a symmetry class
    """

    def __init__(self, mesh: Mesh, sym_class: str = SYMMETRIC_CLASS):
        if sym_class not in SYMMETRY_CLASSES:
            raise InvalidParameterError(
                f"Unknown symmetry class '{sym_class}'; valid: {', '.join(SYMMETRY_CLASSES)}"
            )
        self.mesh = mesh
        self.sym_class = sym_class
        self.characters = SYMMETRY_CLASSES[sym_class]

        n = mesh.n_nodes
        if self.characters is None:
            self.matrix = sp.identity(n, format='csr')
        else:
            c_xz, c_yz = self.characters
            perm_xz, perm_yz = mesh.sym_maps['xz'], mesh.sym_maps['yz']
            eye = np.arange(n)
            rows = np.concatenate([eye] * 4)
            cols = np.concatenate([eye, perm_xz, perm_yz, perm_xz[perm_yz]])
            vals = 0.25 * np.concatenate([
                np.ones(n), np.full(n, c_xz), np.full(n, c_yz), np.full(n, c_xz * c_yz),
            ]).astype(float)
            self.matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.apply(values)

    def defect(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        return float(np.abs(self.apply(values) - values).max()) if values.size else 0.0

    def is_symmetric(self, values: np.ndarray, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.abs(values).max())) if np.size(values) else 1.0
        return self.defect(values) <= tol * scale

    def reduction_basis(self, mask: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray]:
        """
        Signed orbit indicators spanning the class on the masked nodes

        Returns:
            (B, reps): B maps orbit coefficients to masked-node values,
            reps are the masked-local indices of one node per orbit
        """
        idx = np.flatnonzero(mask)
        if self.characters is None:
            return sp.identity(len(idx), format='csr'), np.arange(len(idx))

        local = -np.ones(self.mesh.n_nodes, dtype=np.int64)
        local[idx] = np.arange(len(idx))
        c_xz, c_yz = self.characters
        perm_xz, perm_yz = self.mesh.sym_maps['xz'], self.mesh.sym_maps['yz']

        assigned = np.zeros(self.mesh.n_nodes, dtype=bool)
        rows, cols, vals, reps = [], [], [], []
        for i in idx:
            if assigned[i]:
                continue
            signs: Dict[int, int] = {}
            forced_zero = False
            for node, sign in ((i, 1), (perm_xz[i], c_xz), (perm_yz[i], c_yz), (perm_xz[perm_yz[i]], c_xz * c_yz)):
                node = int(node)
                if node in signs and signs[node] != sign:
                    forced_zero = True
                signs[node] = sign
            assigned[list(signs)] = True
            if forced_zero:
                continue
            column = len(reps)
            reps.append(local[i])
            for node, sign in signs.items():
                rows.append(local[node])
                cols.append(column)
                vals.append(float(sign))

        basis = sp.coo_matrix((vals, (rows, cols)), shape=(len(idx), len(reps))).tocsr()
        return basis, np.array(reps, dtype=np.int64)


def symmetric_projector(mesh: Mesh, sym_class: str = SYMMETRIC_CLASS) -> SymmetricProjector:
    """Projector onto fields invariant under R_xz and antivariant under R_yz (by default)"""
    return SymmetricProjector(mesh, sym_class)


def harmonic_extension(
    mesh: Mesh,
    boundary_values: np.ndarray,
    sym_class: str = SYMMETRIC_CLASS
) -> np.ndarray:
    """
    Discrete round-sphere harmonic function with the given trace

    Args:
        mesh: Punctured sphere mesh
        boundary_values: Node array; only boundary entries are read
        sym_class: Class the trace must belong to

    Returns:
        Node values, equal to the trace on the boundary
    """
    values = np.asarray(boundary_values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise InvalidParameterError(f"boundary_values must have shape ({mesh.n_nodes},), got {values.shape}")

    u = np.zeros(mesh.n_nodes)
    u[mesh.boundary] = values[mesh.boundary]
    projector = SymmetricProjector(mesh, sym_class)
    if not projector.is_symmetric(u):
        raise SymmetryClassError(f"Boundary data is not in class {sym_class} (defect {projector.defect(u):.2e})")

    interior = mesh.interior
    if not interior.any():
        return u

    K = mesh.round_operator.stiffness
    basis, _ = projector.reduction_basis(interior)
    K_ii = K[interior][:, interior]
    K_ib = K[interior][:, mesh.boundary]
    reduced = (basis.T @ K_ii @ basis).tocsc()
    rhs = -basis.T @ (K_ib @ u[mesh.boundary])
    try:
        coefficients = splu(reduced).solve(rhs)
    except RuntimeError as e:
        raise SingularOperatorError(f"Harmonic extension solve failed: {e}")
    u[interior] = basis @ coefficients
    return u


# Chart derivatives of node fields

@dataclass
class ChartDerivatives:
    """Least-squares stencils for first and second derivatives in the node charts"""
    first: Tuple[sp.csr_matrix, sp.csr_matrix]
    second: Dict[str, sp.csr_matrix] = field(default_factory=dict)

    def apply(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (dh (n, 2), d2h (n, 2, 2))"""
        dh = np.stack([self.first[0] @ values, self.first[1] @ values], axis=1)
        h_aa = self.second['aa'] @ values
        h_ab = self.second['ab'] @ values
        h_bb = self.second['bb'] @ values
        d2h = np.stack([np.stack([h_aa, h_ab], axis=1), np.stack([h_ab, h_bb], axis=1)], axis=1)
        return dh, d2h


def derivative_operators(mesh: Mesh, min_points: int = 9) -> ChartDerivatives:
    """
    Weighted quadratic fits over the two-ring of every node

    Neighbours are placed in the gnomonic chart of the node; the fit keeps
    the centre value fixed, so each operator annihilates constants.
    """
    adjacency = (mesh.adjacency > 0).astype(np.int64)
    two_ring = ((adjacency + adjacency @ adjacency) > 0).tocsr()
    three_ring = ((two_ring + two_ring @ adjacency) > 0).tocsr()
    e1, e2 = mesh.frames

    rows, cols = [], []
    coefficients = []
    for i in range(mesh.n_nodes):
        neighbours = two_ring.indices[two_ring.indptr[i]:two_ring.indptr[i + 1]]
        neighbours = neighbours[neighbours != i]
        if len(neighbours) < min_points:
            neighbours = three_ring.indices[three_ring.indptr[i]:three_ring.indptr[i + 1]]
            neighbours = neighbours[neighbours != i]

        q = mesh.nodes[neighbours]
        depth = q @ mesh.nodes[i]
        a = (q @ e1[i]) / depth
        b = (q @ e2[i]) / depth
        design = np.stack([a, b, 0.5 * a * a, a * b, 0.5 * b * b], axis=1)
        weight = 1.0 / np.sqrt(a * a + b * b)
        fit = np.linalg.pinv(design * weight[:, None]) * weight[None, :]

        rows.append(np.full(len(neighbours) + 1, i))
        cols.append(np.concatenate([neighbours, [i]]))
        coefficients.append(np.concatenate([fit, -fit.sum(axis=1, keepdims=True)], axis=1))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    stacked = np.concatenate(coefficients, axis=1)
    shape = (mesh.n_nodes, mesh.n_nodes)

    def operator(k: int) -> sp.csr_matrix:
        return sp.coo_matrix((stacked[k], (rows, cols)), shape=shape).tocsr()

    return ChartDerivatives(
        first=(operator(0), operator(1)),
        second={'aa': operator(2), 'ab': operator(3), 'bb': operator(4)},
    )


# Serialization

def write_mesh(mesh: Mesh, path: str) -> Tuple[str, str]:
    """OBJ geometry plus a sidecar JSON with tags and symmetry permutations"""
    write_obj(path, mesh.nodes, mesh.triangles, comments=[
        f"punctured sphere phi0={mesh.phi0!r} refinement={mesh.refinement}",
    ])
    sidecar = os.path.splitext(path)[0] + '.json'
    with open(sidecar, 'w') as f:
        json.dump({
            'phi0': mesh.phi0,
            'refinement': mesh.refinement,
            'boundary_tag': mesh.boundary_tag.tolist(),
            'sym_maps': {name: perm.tolist() for name, perm in mesh.sym_maps.items()},
        }, f, sort_keys=True)
    return path, sidecar


def read_mesh(path: str) -> Mesh:
    """Inverse of write_mesh"""
    nodes, triangles = read_obj(path)
    sidecar = os.path.splitext(path)[0] + '.json'
    if not os.path.exists(sidecar):
        raise MeshIOError(f"Sidecar not found: {sidecar}")
    with open(sidecar, 'r') as f:
        meta = json.load(f)
    tags = np.array(meta['boundary_tag'], dtype=np.int64)
    if len(tags) != len(nodes):
        raise MeshIOError(f"Sidecar has {len(tags)} tags for {len(nodes)} nodes")
    return Mesh(
        nodes=nodes, triangles=triangles, boundary_tag=tags,
        sym_maps={name: np.array(perm, dtype=np.int64) for name, perm in meta['sym_maps'].items()},
        phi0=float(meta['phi0']), refinement=int(meta['refinement']),
    )
