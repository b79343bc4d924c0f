"""
Stage 4: Graph Geometry
Normal graphs over the bent slab, the shrinker residual F(h, tau), the
residual of the rescaled surface and the embeddedness check
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import jax
import jax.numpy as jnp
import trimesh
from scipy.spatial import cKDTree

from stages.stage1_scherk import equator_arc, narrowest_hole_half_width
from stages.stage2_transforms import BATCH_SIZE, PulledGeometry, period_shift
from stages.stage3_discretize import Mesh
from utils.errors import InvalidParameterError, OutOfDomainError

jax.config.update("jax_enable_x64", True)

DOMAIN_LIMIT = 0.5
GEOMETRY_KEYS = ('X', 'J', 'nu', 'g', 'a', 'A', 'gamma', 'gradA')


@dataclass
class GraphSample:
    """Geometry of the graph of h over the bent slab at one point"""
    Xh: np.ndarray
    nuh: np.ndarray
    btilde: float
    gh: np.ndarray
    ah: np.ndarray
    Hh: float
    F: float = 0.0


def _graph_point(geo, h, dh, hv, tau):
    """
    Graph geometry from the pulled tensors and the chart derivatives of h

    hv holds (h_aa, h_ab, h_bb). W is the tangent vector (Id - hA)^{-1} grad h,
    so that nu~ = nu - J W and |nu~|^2 = 1 + g(W, W).
    """
    g, a, A = geo['g'], geo['a'], geo['A']
    hess = jnp.stack([jnp.stack([hv[0], hv[1]]), jnp.stack([hv[1], hv[2]])])

    W = jnp.linalg.solve(jnp.eye(2) - h * A, jnp.linalg.solve(g, dh))
    W_low = g @ W
    nu_tilde = geo['nu'] - geo['J'] @ W
    btilde = 1.0 / jnp.sqrt(1.0 + W @ W_low)
    nuh = btilde * nu_tilde

    AA = a @ A
    gh = g - 2.0 * h * a + h * h * AA + jnp.outer(dh, dh)

    covariant_hess = hess - jnp.einsum('kij,k->ij', geo['gamma'], dh)
    aW = a @ W
    a_tilde = (
        a - h * AA + covariant_hess
        + h * jnp.einsum('l,ilj->ij', W_low, geo['gradA'])
        + jnp.outer(dh, aW) + jnp.outer(aW, dh)
    )
    ah = btilde * 0.5 * (a_tilde + a_tilde.T)
    Hh = jnp.trace(jnp.linalg.solve(gh, ah))

    Xh = geo['X'] + h * geo['nu']
    F = Hh + tau * nuh[0] + tau * tau * jnp.dot(Xh, nuh)
    return {'Xh': Xh, 'nuh': nuh, 'btilde': btilde, 'gh': gh, 'ah': ah, 'Hh': Hh, 'F': F}


def _residual_point(geo, h, dh, hv, tau):
    return _graph_point(geo, h, dh, hv, tau)['F']


_sample_kernel = jax.jit(_graph_point)
_sample_batch = jax.jit(jax.vmap(_graph_point, in_axes=(0, 0, 0, 0, None)))
_coefficient_batch = jax.jit(jax.vmap(jax.grad(_residual_point, argnums=(1, 2, 3)), in_axes=(0, 0, 0, 0, None)))


def _map_nodes(kernel, geo: Dict[str, np.ndarray], h, dh, hv, tau: float):
    """Run a vmapped kernel over all nodes in padded batches"""
    n = len(h)
    parts = []
    for start in range(0, n, BATCH_SIZE):
        stop = min(start + BATCH_SIZE, n)
        take = np.concatenate([np.arange(start, stop), np.full(BATCH_SIZE - (stop - start), start, dtype=int)])
        out = kernel({k: jnp.asarray(v[take]) for k, v in geo.items()},
                     jnp.asarray(h[take]), jnp.asarray(dh[take]), jnp.asarray(hv[take]), float(tau))
        parts.append(jax.tree_util.tree_map(lambda x: np.asarray(x)[:stop - start], out))
    return jax.tree_util.tree_map(lambda *xs: np.concatenate(xs, axis=0), *parts)


def _kappa_bound(A: np.ndarray) -> np.ndarray:
    tr = np.trace(A, axis1=-2, axis2=-1)
    det = np.linalg.det(A)
    return np.abs(0.5 * tr) + np.sqrt(np.maximum(0.25 * tr ** 2 - det, 0.0))


def graph_sample(
    h: float,
    dh: np.ndarray,
    d2h: np.ndarray,
    tau: float,
    geo: PulledGeometry,
    node: Optional[int] = None
) -> GraphSample:
    """
    Graph geometry at one point

    Args:
        h: Value of the graph function
        dh: First chart derivatives (2,)
        d2h: Second chart derivatives (2, 2)
        tau: Bending parameter
        geo: Pulled geometry at the point, in the same chart
        node: Node index reported by the domain error

    Returns:
        GraphSample
    """
    bound = float(abs(h) * _kappa_bound(np.asarray(geo.A0tau)))
    if bound >= DOMAIN_LIMIT:
        raise OutOfDomainError(f"|h| kappa_max = {bound:.4f} >= 1/2 at node {node}", node if node is not None else -1)

    d2h = np.asarray(d2h, dtype=float)
    arrays = {
        'X': geo.X0tau, 'J': geo.frame, 'nu': geo.nu0tau, 'g': geo.g0tau,
        'a': geo.a0tau, 'A': geo.A0tau, 'gamma': geo.christoffel, 'gradA': geo.gradA,
    }
    out = _sample_kernel(
        {k: jnp.asarray(v) for k, v in arrays.items()}, float(h),
        jnp.asarray(dh, dtype=float), jnp.asarray([d2h[0, 0], 0.5 * (d2h[0, 1] + d2h[1, 0]), d2h[1, 1]]),
        float(tau),
    )
    out = {k: np.asarray(v) for k, v in out.items()}
    return GraphSample(
        Xh=out['Xh'], nuh=out['nuh'], btilde=float(out['btilde']), gh=out['gh'],
        ah=out['ah'], Hh=float(out['Hh']), F=float(out['F']),
    )


class GraphOperator:
    """
    Discrete residual of the shrinker equation on a punctured sphere mesh

    The pointwise residual uses least-squares chart derivatives. Adding
    (L - J0) h, with L the assembled linearized operator and J0 the
    pointwise linearization at (0, 0), makes L the exact Jacobian at the
    origin while leaving the nonlinear part untouched.
    """

    def __init__(self, mesh: Mesh):
        if mesh.is_closed:
            raise InvalidParameterError("The residual is defined on punctured meshes only")
        self.mesh = mesh
        self.derivatives = mesh.derivatives
        self.base = mesh.geometry(0.0)
        self.interior = mesh.interior

        norm_A2 = self.base.norm_A2
        round_lb = mesh.round_operator
        self.linearized = (
            sp.diags(0.5 * norm_A2) @ round_lb.lumped_laplacian() + sp.diags(norm_A2)
        ).tocsr()
        self.weights = round_lb.lumped * 2.0 / norm_A2

        origin = np.zeros(mesh.n_nodes)
        self.origin_jacobian = self.pointwise_jacobian(origin, 0.0)
        self.correction = (self.linearized - self.origin_jacobian).tocsr()

    def _geometry_arrays(self, tau: float) -> Dict[str, np.ndarray]:
        geo = self.mesh.geometry(tau)
        return {key: getattr(geo, key) for key in GEOMETRY_KEYS}

    def _derivatives(self, h: np.ndarray):
        dh, d2h = self.derivatives.apply(h)
        hv = np.stack([d2h[:, 0, 0], d2h[:, 0, 1], d2h[:, 1, 1]], axis=1)
        return dh, d2h, hv

    def check_domain(self, h: np.ndarray, tau: float) -> None:
        """Raise OutOfDomainError where |h| kappa_max >= 1/2"""
        ratio = np.abs(h) * self.mesh.geometry(tau).principal_curvature_bound()
        worst = int(np.argmax(ratio))
        if ratio[worst] >= DOMAIN_LIMIT:
            raise OutOfDomainError(
                f"|h| kappa_max = {ratio[worst]:.4f} >= 1/2 at node {worst} (h = {h[worst]:.4g})", worst
            )

    def sample(self, h: np.ndarray, tau: float) -> Dict[str, np.ndarray]:
        """GraphSample fields at every node, stacked"""
        h = np.asarray(h, dtype=float)
        self.check_domain(h, tau)
        dh, _, hv = self._derivatives(h)
        return _map_nodes(_sample_batch, self._geometry_arrays(tau), h, dh, hv, tau)

    def residual(self, h: np.ndarray, tau: float) -> np.ndarray:
        """F(h, tau) at interior nodes, zero on the boundary circles"""
        h = np.asarray(h, dtype=float)
        F = self.sample(h, tau)['F'] + self.correction @ h
        F[~self.interior] = 0.0
        return F

    def rescaled_residual(self, h: np.ndarray, tau: float) -> np.ndarray:
        """
        H + Y.n on Y = tau (X + h nu) + e1, differentiated directly

        The same defect correction as residual() is added, divided by tau.
        """
        if tau == 0:
            raise InvalidParameterError("rescaled_residual requires tau != 0")
        h = np.asarray(h, dtype=float)
        self.check_domain(h, tau)
        geo = self.mesh.geometry(tau)
        dh, d2h, _ = self._derivatives(h)
        nu = geo.nu

        DY = tau * (geo.J + nu[:, :, None] * dh[:, None, :] + h[:, None, None] * geo.dnu)
        D2Y = tau * (
            geo.H2
            + nu[:, :, None, None] * d2h[:, None, :, :]
            + dh[:, None, :, None] * geo.dnu[:, :, None, :]
            + dh[:, None, None, :] * geo.dnu[:, :, :, None]
            + h[:, None, None, None] * geo.d2nu
        )
        normal = np.cross(DY[:, :, 0], DY[:, :, 1])
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        normal *= np.sign(np.sum(normal * nu, axis=1))[:, None]

        gY = np.einsum('nmi,nmj->nij', DY, DY)
        aY = np.einsum('nmij,nm->nij', D2Y, normal)
        HY = np.trace(np.linalg.solve(gY, aY), axis1=1, axis2=2)
        Y = tau * (geo.X + h[:, None] * nu)
        Y[:, 0] += 1.0

        R = HY + np.sum(Y * normal, axis=1) + (self.correction @ h) / tau
        R[~self.interior] = 0.0
        return R

    def pointwise_jacobian(self, h: np.ndarray, tau: float) -> sp.csr_matrix:
        """Jacobian of the stencil-based pointwise residual at h"""
        h = np.asarray(h, dtype=float)
        dh, _, hv = self._derivatives(h)
        c_h, c_d, c_hv = _map_nodes(_coefficient_batch, self._geometry_arrays(tau), h, dh, hv, tau)
        D = self.derivatives
        return (
            sp.diags(c_h)
            + sp.diags(c_d[:, 0]) @ D.first[0] + sp.diags(c_d[:, 1]) @ D.first[1]
            + sp.diags(c_hv[:, 0]) @ D.second['aa']
            + sp.diags(c_hv[:, 1]) @ D.second['ab']
            + sp.diags(c_hv[:, 2]) @ D.second['bb']
        ).tocsr()

    def jacobian(self, h: np.ndarray, tau: float, mode: str = 'chord_at_origin') -> sp.csr_matrix:
        """
        Jacobian used by the Newton step

        Args:
            h: Current iterate
            tau: Bending parameter
            mode: 'chord_at_origin', 'chord_at_tau' or 'full'
        """
        if mode == 'chord_at_origin':
            return self.linearized
        if mode == 'chord_at_tau':
            return (self.pointwise_jacobian(np.zeros_like(h), tau) + self.correction).tocsr()
        if mode == 'full':
            return (self.pointwise_jacobian(h, tau) + self.correction).tocsr()
        raise InvalidParameterError(f"Unknown jacobian_mode '{mode}'")

    def norm(self, values: np.ndarray) -> float:
        """Area-weighted L2 norm over the interior nodes (metric of the slab)"""
        values = np.asarray(values, dtype=float)
        return float(np.sqrt(np.sum(self.weights[self.interior] * values[self.interior] ** 2)))


def graph_operator(mesh: Mesh) -> GraphOperator:
    """Memoized GraphOperator of a mesh"""
    if '_graph_operator' not in mesh.__dict__:
        mesh.__dict__['_graph_operator'] = GraphOperator(mesh)
    return mesh.__dict__['_graph_operator']


def residual_F(mesh: Mesh, h: np.ndarray, tau: float) -> np.ndarray:
    """F(h, tau) = H + tau e1.nu + tau^2 X.nu of the graph of h over the bent slab"""
    return graph_operator(mesh).residual(h, tau)


def rescaled_residual(mesh: Mesh, h: np.ndarray, tau: float) -> np.ndarray:
    """H + X.nu of the rescaled graph; residual_F = tau * rescaled_residual"""
    return graph_operator(mesh).rescaled_residual(h, tau)


# Embeddedness

@dataclass
class SlabMesh:
    """Sphere mesh cut open along the seam y = -pi/2, one copy per sheet"""
    triangles: np.ndarray
    source: np.ndarray
    lifted: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.source)


@dataclass
class EmbeddednessReport:
    max_abs_h: float
    delta: float
    passes_delta: bool
    tau_in_claim: bool
    intersections: int
    clearance: float
    narrowest_hole: float
    issues: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.passes_delta and self.intersections == 0

    def to_dict(self) -> Dict:
        return {
            'max_abs_h': self.max_abs_h,
            'delta': self.delta,
            'passes_delta': self.passes_delta,
            'tau_in_claim': self.tau_in_claim,
            'intersections': self.intersections,
            'clearance': self.clearance,
            'narrowest_hole': self.narrowest_hole,
            'passed': self.passed,
            'issues': list(self.issues),
        }


def build_slab_mesh(mesh: Mesh) -> SlabMesh:
    """
    Duplicate the nodes of the seam arcs (n_y = 0, n_x n_z < 0)

    Triangles of the lower hemisphere (sheet B) use the lifted copies, so
    the two sides of the seam sit one period apart.
    """
    seam = np.flatnonzero(equator_arc(mesh.nodes) == -1)
    copy_of = np.full(mesh.n_nodes, -1, dtype=np.int64)
    copy_of[seam] = mesh.n_nodes + np.arange(len(seam))

    centroid_y = mesh.nodes[mesh.triangles][:, :, 1].mean(axis=1)
    triangles = mesh.triangles.copy()
    lower = centroid_y < 0
    swapped = triangles[lower]
    has_copy = copy_of[swapped] >= 0
    swapped[has_copy] = copy_of[swapped[has_copy]]
    triangles[lower] = swapped

    source = np.concatenate([np.arange(mesh.n_nodes), seam])
    lifted = np.concatenate([np.zeros(mesh.n_nodes, dtype=bool), np.ones(len(seam), dtype=bool)])
    return SlabMesh(triangles=triangles, source=source, lifted=lifted)


def graph_surface(mesh: Mesh, h: np.ndarray, tau: float, slab: Optional[SlabMesh] = None) -> Tuple[np.ndarray, SlabMesh]:
    """Vertices X + h nu of the graph over the cut slab"""
    slab = slab or build_slab_mesh(mesh)
    geo = mesh.geometry(tau)
    points = geo.X + np.asarray(h, dtype=float)[:, None] * geo.nu
    vertices = points[slab.source]
    vertices[slab.lifted] = period_shift(tau, vertices[slab.lifted])
    return vertices, slab


def _segment_hits(origin, direction, v0, v1, v2, eps):
    """Moller-Trumbore, segments origin + t direction with t in (0, 1)"""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direction, e2)
    det = np.sum(e1 * p, axis=-1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.sum(s * p, axis=-1) * inv
    q = np.cross(s, e1)
    v = np.sum(direction * q, axis=-1) * inv
    t = np.sum(e2 * q, axis=-1) * inv
    return ok & (u > eps) & (v > eps) & (u + v < 1.0 - eps) & (t > eps) & (t < 1.0 - eps)


def intersection_scan(vertices: np.ndarray, triangles: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """
    Pairs of triangles without a common vertex whose interiors intersect

    Returns:
        (k, 2) array of intersecting triangle pairs
    """
    corners = vertices[triangles]
    centroids = corners.mean(axis=1)
    radius = np.linalg.norm(corners - centroids[:, None, :], axis=2).max()
    pairs = cKDTree(centroids).query_pairs(2.0 * radius, output_type='ndarray')
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)

    shared = (triangles[pairs[:, 0]][:, :, None] == triangles[pairs[:, 1]][:, None, :]).any(axis=(1, 2))
    pairs = pairs[~shared]

    hit = np.zeros(len(pairs), dtype=bool)
    for first, second in ((0, 1), (1, 0)):
        edges_of = corners[pairs[:, first]]
        target = corners[pairs[:, second]]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            hit |= _segment_hits(edges_of[:, a], edges_of[:, b] - edges_of[:, a],
                                 target[:, 0], target[:, 1], target[:, 2], eps)
    return pairs[hit]


def hole_clearance(vertices: np.ndarray, triangles: np.ndarray, chunk: int = 128, t_min: float = 1e-3) -> float:
    """
    Half the shortest normal-ray distance from a vertex to the rest of the surface

    Rays are cast both ways along the vertex normals; triangles incident to
    the vertex are skipped.
    """
    normals = trimesh.Trimesh(vertices=vertices, faces=triangles, process=False).vertex_normals
    v0, v1, v2 = (vertices[triangles[:, k]] for k in range(3))
    e1, e2 = v1 - v0, v2 - v0
    best = math.inf

    for start in range(0, len(vertices), chunk):
        ids = np.arange(start, min(start + chunk, len(vertices)))
        incident = (triangles[None, :, :] == ids[:, None, None]).any(axis=2)
        for sign in (1.0, -1.0):
            d = sign * normals[ids][:, None, :]
            p = np.cross(d, e2[None])
            det = np.sum(e1[None] * p, axis=2)
            ok = np.abs(det) > 1e-14
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            s = vertices[ids][:, None, :] - v0[None]
            u = np.sum(s * p, axis=2) * inv
            q = np.cross(s, e1[None])
            v = np.sum(d * q, axis=2) * inv
            t = np.sum(e2[None] * q, axis=2) * inv
            valid = ok & ~incident & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9) & (t > t_min)
            if valid.any():
                best = min(best, float(t[valid].min()))

    return 0.5 * best


def embeddedness_check(
    mesh: Mesh,
    h: np.ndarray,
    tau: float,
    delta: float = 0.125,
    tau_claim: float = 0.005,
    scan: bool = True
) -> EmbeddednessReport:
    """
    Embeddedness of the graph of h over the bent slab

    The sufficient criterion max|h| < delta was stated for |tau| <= tau_claim;
    the triangle intersection scan decides independently of it.

    Args:
        mesh: Punctured sphere mesh
        h: Graph function at the nodes
        tau: Bending parameter
        delta: Bound on |h|
        tau_claim: Bending range of the delta criterion
        scan: Also run the intersection scan and the clearance measurement

    Returns:
        EmbeddednessReport
    """
    h = np.asarray(h, dtype=float)
    max_abs_h = float(np.abs(h).max()) if h.size else 0.0
    issues = []
    passes_delta = max_abs_h < delta
    if not passes_delta:
        issues.append(f"max|h| = {max_abs_h:.4g} >= delta = {delta}")
    tau_in_claim = abs(tau) <= tau_claim

    intersections, clearance = 0, math.nan
    if scan:
        vertices, slab = graph_surface(mesh, h, tau)
        intersections = len(intersection_scan(vertices, slab.triangles))
        clearance = hole_clearance(vertices, slab.triangles)
        if intersections:
            issues.append(f"{intersections} intersecting triangle pairs")

    return EmbeddednessReport(
        max_abs_h=max_abs_h, delta=delta, passes_delta=passes_delta, tau_in_claim=tau_in_claim,
        intersections=intersections, clearance=clearance, narrowest_hole=narrowest_hole_half_width(),
        issues=issues,
    )
