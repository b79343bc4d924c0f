"""
Stage 6: Dirichlet Solver
Linearized operator on the symmetric Dirichlet space, Newton iteration for
F(h, tau) = 0 with prescribed boundary trace, and assembly of the N-handle
core from the solution on one half period
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from stages.stage1_scherk import puncture_radius
from stages.stage3_discretize import (
    SYMMETRIC_CLASS,
    Mesh,
    SymmetricProjector,
    assemble_lb,
    build_mesh,
    harmonic_extension,
)
from stages.stage4_graphgeom import embeddedness_check, graph_operator
from stages.stage5_spectral import kernel_check
from utils.errors import (
    InvalidParameterError,
    NonConvergenceError,
    OutOfDomainError,
    ReflectionMismatchError,
    SingularOperatorError,
    SymmetryClassError,
)
from utils.meshio import euler_characteristic
from utils.validation import JACOBIAN_MODES

WELD_TOL = 1e-9
MIRROR_TOL = 1e-10
NORM_EQUIVALENCE_BOUND = 2.0


@dataclass
class SolveConfig:
    """Parameters of one Newton solve"""
    tau: float
    c0: float = 3.0
    refinement: int = 4
    newton_tol: float = 1e-10
    max_iters: int = 25
    jacobian_mode: str = 'chord_at_origin'
    delta0: float = 1e-2
    eta0: float = 0.0625
    embed_delta: float = 0.125
    embed_tau_claim: float = 0.005
    reduction_tol: float = 1e-12
    sym_class: str = SYMMETRIC_CLASS
    scan_embedding: bool = True
    kernel_min_gap: float = 1e-6
    check_kernel: bool = True

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise InvalidParameterError(f"newton_tol must be positive, got {self.newton_tol}")
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise InvalidParameterError(
                f"jacobian_mode must be one of {', '.join(JACOBIAN_MODES)}, got {self.jacobian_mode}"
            )
        eta = 1.0 / (2.0 * self.c0)
        if abs(self.tau) >= eta:
            raise InvalidParameterError(f"|tau| must be < 1/(2 c0) = {eta:.6g}, got {self.tau}")

    @property
    def phi0(self) -> float:
        return puncture_radius(self.c0)

    @classmethod
    def from_config(cls, config: Dict[str, Any], **overrides) -> 'SolveConfig':
        keys = cls.__dataclass_fields__.keys()
        values = {key: config[key] for key in keys if key in config}
        values.update(overrides)
        return cls(**values)


@dataclass
class SolveResult:
    h: np.ndarray = field(repr=False)
    residual_history: List[float]
    converged: bool
    embedded: bool
    symmetric: bool
    tau: float
    jacobian_mode: str
    boundary_error: float
    norm_ratio: float
    embedding: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        """Residual evaluations, the converged one included"""
        return len(self.residual_history)

    @property
    def updates(self) -> int:
        """Newton steps taken"""
        return len(self.residual_history) - 1

    @property
    def weighted_residual(self) -> float:
        return self.residual_history[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tau': self.tau,
            'jacobian_mode': self.jacobian_mode,
            'converged': self.converged,
            'iterations': self.iterations,
            'updates': self.updates,
            'residual_history': [float(r) for r in self.residual_history],
            'weighted_residual': float(self.weighted_residual),
            'max_abs_h': float(np.abs(self.h).max()),
            'embedded': self.embedded,
            'symmetric': self.symmetric,
            'boundary_error': self.boundary_error,
            'norm_ratio': self.norm_ratio,
            'embedding': self.embedding,
            'warnings': list(self.warnings),
        }


class SymmetricDirichletSolver:
    """
    Solve J delta = -r for delta in the class, vanishing on the boundary

    Unknowns are signed orbit coefficients; one equation per orbit is kept,
    which is exact when J commutes with both reflections.
    """

    def __init__(self, mesh: Mesh, sym_class: str = SYMMETRIC_CLASS):
        self.mesh = mesh
        self.projector = SymmetricProjector(mesh, sym_class)
        self.interior = mesh.interior
        self.basis, self.reps = self.projector.reduction_basis(self.interior)
        self._factor = None
        self._factor_key = None

    def is_factored(self, key: Any) -> bool:
        return key is not None and key == self._factor_key

    def factor(self, J: Optional[sp.spmatrix], key: Optional[Any] = None):
        if self.is_factored(key):
            return self._factor
        reduced = (J[self.interior][:, self.interior] @ self.basis)[self.reps].tocsc()
        try:
            lu = splu(reduced)
        except RuntimeError as e:
            raise SingularOperatorError(f"Reduced Jacobian is singular: {e}")
        self._factor, self._factor_key = lu, key
        return lu

    def solve(self, J: Optional[sp.spmatrix], rhs: np.ndarray, key: Optional[Any] = None) -> np.ndarray:
        lu = self.factor(J, key)
        projected = self.projector.apply(rhs)[self.interior][self.reps]
        delta = np.zeros(self.mesh.n_nodes)
        delta[self.interior] = self.basis @ lu.solve(projected)
        return delta


class LinearizedOperator:
    """
    u -> Delta_g u + |A|^2 u at tau = 0, assembled through the sphere as
    (|A|^2 / 2)(Delta_S2 + 2) u
    """

    def __init__(self, mesh: Mesh, sym_class: str = SYMMETRIC_CLASS, kernel_min_gap: float = 1e-6,
                 check_kernel: bool = True):
        self.mesh = mesh
        self.sym_class = sym_class
        self.matrix = graph_operator(mesh).linearized
        self.solver = SymmetricDirichletSolver(mesh, sym_class)
        self.gap = None
        if check_kernel:
            self.gap = kernel_check(mesh.phi0, sym_class=sym_class, mesh=mesh)
            if self.gap <= kernel_min_gap:
                raise SingularOperatorError(
                    f"Delta + 2 has eigenvalue within {self.gap:.2e} of 0 on this mesh (phi0={mesh.phi0:.4f})"
                )

    def apply(self, u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if not self.solver.projector.is_symmetric(u, tol):
            raise SymmetryClassError(
                f"Field is not in class {self.sym_class} (defect {self.solver.projector.defect(u):.2e})"
            )
        return self.matrix @ u

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.apply(u)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """u with zero boundary values and L u = rhs at the interior nodes"""
        return self.solver.solve(self.matrix, rhs, key='origin')


def linearized_operator(mesh: Mesh, sym_class: str = SYMMETRIC_CLASS, kernel_min_gap: float = 1e-6) -> LinearizedOperator:
    """Linearization of F at (0, 0), gated on a positive kernel gap"""
    return LinearizedOperator(mesh, sym_class, kernel_min_gap)


def tau_derivative_field(mesh: Mesh, dtau: float = 1e-5) -> np.ndarray:
    """v = dF(0, tau)/dtau at tau = 0 by central differences"""
    if dtau <= 0:
        raise InvalidParameterError(f"dtau must be positive, got {dtau}")
    op = graph_operator(mesh)
    zero = np.zeros(mesh.n_nodes)
    return (op.residual(zero, dtau) - op.residual(zero, -dtau)) / (2.0 * dtau)


def random_symmetric_trace(
    mesh: Mesh,
    norm: float,
    seed: int,
    sym_class: str = SYMMETRIC_CLASS
) -> np.ndarray:
    """Seeded boundary data in the class with max|f| = norm, zero inside"""
    rng = np.random.default_rng(seed)
    f = np.zeros(mesh.n_nodes)
    f[mesh.boundary] = rng.standard_normal(int(mesh.boundary.sum()))
    f = SymmetricProjector(mesh, sym_class).apply(f)
    f[mesh.interior] = 0.0
    peak = np.abs(f).max()
    return f * (norm / peak) if peak > 0 else f


def boundary_data(mesh: Mesh, kind: str, norm: float, seed: int) -> np.ndarray:
    """Boundary trace by name: 'zero' or 'random'"""
    if kind == 'zero':
        return np.zeros(mesh.n_nodes)
    if kind == 'random':
        return random_symmetric_trace(mesh, norm, seed)
    raise InvalidParameterError(f"Unknown boundary data kind '{kind}'")


def _energy(operator, u: np.ndarray) -> float:
    return float(u @ (operator.stiffness @ u) + u @ (operator.mass @ u))


def norm_equivalence(mesh: Mesh, u: np.ndarray, tau: float) -> float:
    """
    Ratio of the H1-type norms of u over the unbent and the bent slab

    Returns:
        ||u||_{Sigma_0} / ||u||_{Sigma_tau} (1.0 for u = 0)
    """
    u = np.asarray(u, dtype=float)
    bent = _energy(assemble_lb(mesh, 'sigma_pullback', tau), u)
    if bent == 0:
        return 1.0
    flat = _energy(assemble_lb(mesh, 'sigma_pullback', 0.0), u)
    return math.sqrt(flat / bent)


def newton_solve(mesh: Mesh, f: np.ndarray, config: SolveConfig) -> SolveResult:
    """
    Solve F(h, tau) = 0 with h = f on the boundary circles

    Args:
        mesh: Punctured sphere mesh
        f: Boundary trace (node array, interior entries ignored)
        config: SolveConfig

    Returns:
        SolveResult

    Raises:
        NonConvergenceError: max_iters reached (carries history and iterate)
        OutOfDomainError: |h| kappa_max reached 1/2 (carries the iterate)
        SingularOperatorError: Delta + 2 has an eigenvalue within kernel_min_gap of 0
    """
    tau = config.tau
    f = np.asarray(f, dtype=float)
    trace_norm = float(np.abs(f[mesh.boundary]).max()) if mesh.boundary.any() else 0.0
    if trace_norm > config.delta0:
        raise InvalidParameterError(f"max|f| = {trace_norm:.4g} exceeds delta0 = {config.delta0}")
    if abs(tau) > config.eta0:
        raise InvalidParameterError(f"|tau| = {abs(tau):.4g} exceeds eta0 = {config.eta0}")

    op = graph_operator(mesh)
    linear = LinearizedOperator(mesh, config.sym_class, config.kernel_min_gap, check_kernel=config.check_kernel)
    solver = linear.solver

    h = harmonic_extension(mesh, f, config.sym_class)
    history: List[float] = []
    converged = False
    print(f"  Newton: tau={tau:.6g}, mode={config.jacobian_mode}, tol={config.newton_tol:.1e}")

    try:
        for k in range(config.max_iters):
            F = solver.projector.apply(op.residual(h, tau))
            residual = op.norm(F)
            history.append(residual)
            ratio = f"{residual / history[-2]:.3e}" if len(history) > 1 and history[-2] > 0 else '-'
            print(f"    iter {k:2d}: |F| = {residual:.3e}  ratio = {ratio}")
            if residual <= config.newton_tol:
                converged = True
                break

            if config.jacobian_mode == 'chord_at_origin':
                J, key = linear.matrix, 'origin'
            elif config.jacobian_mode == 'chord_at_tau':
                key = ('tau', tau)
                J = None if solver.is_factored(key) else op.jacobian(h, tau, 'chord_at_tau')
            else:
                J, key = op.jacobian(h, tau, 'full'), None
            h = h + solver.solve(J, -F, key=key)
    except OutOfDomainError as e:
        e.iterate = h.copy()
        print(f"  ✗ Iterate left the graph domain at node {e.node}")
        raise

    if not converged:
        raise NonConvergenceError(
            f"Newton did not reach {config.newton_tol:.1e} in {config.max_iters} iterations "
            f"(last {history[-1]:.3e})", history, h,
        )

    boundary_error = float(np.abs(h[mesh.boundary] - f[mesh.boundary]).max()) if mesh.boundary.any() else 0.0
    symmetric = solver.projector.is_symmetric(h, config.reduction_tol)
    report = embeddedness_check(mesh, h, tau, config.embed_delta, config.embed_tau_claim, scan=config.scan_embedding)
    ratio = norm_equivalence(mesh, h, tau) if tau != 0 else 1.0

    warnings = [] if report.passed else [f"not embedded: {issue}" for issue in report.issues]
    marker = '✓' if report.passed else '⚠'
    print(f"  {marker} Converged after {len(history) - 1} updates, max|h| = {np.abs(h).max():.3e}, "
          f"embedded={report.passed}, norm ratio={ratio:.4f}")

    return SolveResult(
        h=h, residual_history=history, converged=converged, embedded=report.passed, symmetric=symmetric,
        tau=tau, jacobian_mode=config.jacobian_mode, boundary_error=boundary_error, norm_ratio=ratio,
        embedding=report.to_dict(),
        warnings=warnings,
    )


# Core assembly

def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def reflection_z(angle: float) -> np.ndarray:
    """Mirror across the vertical plane at polar angle `angle`"""
    c, s = math.cos(2.0 * angle), math.sin(2.0 * angle)
    return np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class CoreResult:
    """The N-handle core surface and its checks"""
    n: int
    c0: float
    vertices: np.ndarray = field(repr=False)
    faces: np.ndarray = field(repr=False)
    h_tilde: np.ndarray = field(repr=False)
    euler_characteristic: int
    boundary_loops: int
    mirror_defect: float
    rotation_defect: float
    rescaled_residual: float
    rescaled_residual_max: float
    plane_distance: float
    cylinder_distance: float
    solve: Optional[SolveResult] = None

    @property
    def handles(self) -> int:
        """One handle per period: chi = -2N"""
        return -self.euler_characteristic // 2

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic - self.boundary_loops) // 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n': self.n,
            'c0': self.c0,
            'vertices': int(len(self.vertices)),
            'faces': int(len(self.faces)),
            'euler_characteristic': self.euler_characteristic,
            'boundary_loops': self.boundary_loops,
            'handles': self.handles,
            'genus': self.genus,
            'mirror_defect': self.mirror_defect,
            'rotation_defect': self.rotation_defect,
            'rescaled_residual': self.rescaled_residual,
            'rescaled_residual_max': self.rescaled_residual_max,
            'plane_distance': self.plane_distance,
            'cylinder_distance': self.cylinder_distance,
            'max_abs_h_tilde': float(np.abs(self.h_tilde).max()),
            'solve': self.solve.to_dict() if self.solve else None,
        }


def _weld(vertices: np.ndarray, faces: np.ndarray, values: np.ndarray):
    """Merge vertices closer than WELD_TOL"""
    pairs = cKDTree(vertices).query_pairs(WELD_TOL, output_type='ndarray')
    n = len(vertices)
    graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else sp.coo_matrix((n, n))
    count, labels = connected_components(graph, directed=False)
    first = np.full(count, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    order = np.argsort(first)
    relabel = np.empty(count, dtype=np.int64)
    relabel[order] = np.arange(count)
    new_index = relabel[labels]
    return vertices[first[order]], new_index[faces], values[first[order]]


def _boundary_loops(faces: np.ndarray, n_vertices: int) -> int:
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = unique[counts == 1]
    if len(boundary) == 0:
        return 0
    graph = sp.coo_matrix((np.ones(len(boundary)), (boundary[:, 0], boundary[:, 1])), shape=(n_vertices, n_vertices))
    _, labels = connected_components(graph, directed=False)
    return int(len(np.unique(labels[np.unique(boundary)])))


def _symmetry_defect(vertices: np.ndarray, linear: np.ndarray) -> float:
    distance, _ = cKDTree(vertices).query(vertices @ linear.T)
    return float(distance.max())


def build_core(mesh: Mesh, n: int, h: Optional[np.ndarray] = None) -> Dict[str, Any]:
    """
    Replicate the scaled graph over the upper hemisphere (one half period) into the full core

    Args:
        mesh: Punctured sphere mesh
        n: Handle count; tau = 1/n
        h: Graph function (zero for the approximate core)

    Returns:
        Dictionary with vertices, faces, per-vertex h_tilde and the piece data
    """
    tau = 1.0 / n
    h = np.zeros(mesh.n_nodes) if h is None else np.asarray(h, dtype=float)
    geo = mesh.geometry(tau)

    upper = mesh.nodes[:, 1] >= 0.0
    local = -np.ones(mesh.n_nodes, dtype=np.int64)
    local[upper] = np.arange(upper.sum())
    faces = local[mesh.triangles[np.all(upper[mesh.triangles], axis=1)]]

    piece = tau * (geo.X[upper] + h[upper, None] * geo.nu[upper])
    piece[:, 0] += 1.0
    values = tau * h[upper]

    mirror = reflection_z(0.5 * math.pi * tau)
    all_vertices, all_faces, all_values = [], [], []
    offset = 0
    for k in range(n):
        rotation = rotation_z(2.0 * math.pi * k * tau)
        for linear, flip in ((rotation, False), (rotation @ mirror, True)):
            all_vertices.append(piece @ linear.T)
            all_faces.append((faces[:, [0, 2, 1]] if flip else faces) + offset)
            all_values.append(values)
            offset += len(piece)

    vertices, faces_out, h_tilde = _weld(np.concatenate(all_vertices), np.concatenate(all_faces),
                                         np.concatenate(all_values))
    return {
        'vertices': vertices, 'faces': faces_out, 'h_tilde': h_tilde,
        'piece': piece, 'piece_nodes': np.flatnonzero(upper),
    }


def solve_core(
    n: int,
    c0: float,
    f_tilde: np.ndarray,
    config: Dict[str, Any],
    mesh: Optional[Mesh] = None
) -> CoreResult:
    """
    Corrected N-handle core: solve at tau = 1/n, rescale and reflect

    Args:
        n: Handle count (n >= n0)
        c0: Truncation constant
        f_tilde: Boundary data on the scaled core, as node values on the sphere mesh
        config: Run configuration (newton_tol, max_iters, core_jacobian_mode,
            delta0, n0, gate_exponent, refinement, ...)
        mesh: Prebuilt mesh for phi0 = arccos(tanh c0)

    Returns:
        CoreResult
    """
    n0 = int(config.get('n0', 8))
    if n < n0:
        raise InvalidParameterError(f"n = {n} is below n0 = {n0}")
    tau = 1.0 / n

    delta0 = float(config.get('delta0', 1e-2))
    gate = delta0 / (2.0 * n ** float(config.get('gate_exponent', 3)))
    f_tilde = np.asarray(f_tilde, dtype=float)
    if np.abs(f_tilde).max(initial=0.0) > gate:
        raise InvalidParameterError(f"max|f_tilde| = {np.abs(f_tilde).max():.4g} exceeds delta0/(2 n^p) = {gate:.4g}")

    mesh = mesh or build_mesh(puncture_radius(c0), int(config.get('refinement', 4)))
    solve_config = SolveConfig.from_config(
        config, tau=tau, c0=c0,
        jacobian_mode=config.get('core_jacobian_mode', 'full'),
        eta0=max(float(config.get('eta0', 0.0625)), 1.0 / n0),
    )
    solution = newton_solve(mesh, n * f_tilde, solve_config)
    core = build_core(mesh, n, solution.h)

    # the half-period piece must meet both mirror planes
    piece = core['piece']
    angles = (0.5 * math.pi * tau, -0.5 * math.pi * tau)
    equator = np.abs(mesh.nodes[core['piece_nodes'], 1]) == 0.0
    for angle in angles:
        normal = np.array([-math.sin(angle), math.cos(angle), 0.0])
        on_plane = equator & (np.sign(mesh.nodes[core['piece_nodes'], 0] * mesh.nodes[core['piece_nodes'], 2])
                              == (1.0 if angle > 0 else -1.0))
        if on_plane.any():
            gap = float(np.abs(piece[on_plane] @ normal).max())
            if gap > MIRROR_TOL:
                raise ReflectionMismatchError(
                    f"Seam nodes sit {gap:.2e} off the mirror plane at angle {angle:.6f}"
                )

    vertices, faces = core['vertices'], core['faces']
    mirror_defect = max(
        _symmetry_defect(vertices, reflection_z(0.5 * math.pi * tau + k * math.pi * tau)) for k in range(2 * n)
    )
    rotation_defect = _symmetry_defect(vertices, np.diag([1.0, -1.0, -1.0]))

    op = graph_operator(mesh)
    rescaled = op.rescaled_residual(solution.h, tau)
    ends = {}
    for circle in range(1, 5):
        ids = np.flatnonzero(mesh.boundary_tag[core['piece_nodes']] == circle)
        ends[circle] = piece[ids]
    plane_distance = float(max(np.abs(ends[c][:, 2]).max() for c in (1, 2)))
    cylinder_distance = float(max(np.abs(np.hypot(ends[c][:, 0], ends[c][:, 1]) - 1.0).max() for c in (3, 4)))

    result = CoreResult(
        n=n, c0=c0, vertices=vertices, faces=faces, h_tilde=core['h_tilde'],
        euler_characteristic=euler_characteristic(vertices, faces),
        boundary_loops=_boundary_loops(faces, len(vertices)),
        mirror_defect=mirror_defect, rotation_defect=rotation_defect,
        rescaled_residual=op.norm(rescaled), rescaled_residual_max=float(np.abs(rescaled).max()),
        plane_distance=plane_distance, cylinder_distance=cylinder_distance, solve=solution,
    )
    print(f"  ✓ Core N={n}: chi={result.euler_characteristic}, loops={result.boundary_loops}, "
          f"handles={result.handles}, mirror defect={mirror_defect:.1e}")
    return result


def run_solve(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Newton solve for the configured tau and boundary data

    Args:
        config: Merged run configuration (tau, c0, refinement, f_kind, f_norm, seed, ...)

    Returns:
        Dictionary with success flag, report and the SolveResult
    """
    try:
        print(f"\n{'=' * 60}")
        print(f"Solve: tau={config['tau']}, c0={config['c0']}, r={config['refinement']}")
        print(f"{'=' * 60}")

        solve_config = SolveConfig.from_config(config)
        mesh = build_mesh(solve_config.phi0, solve_config.refinement)
        f = boundary_data(mesh, config.get('f_kind', 'zero'), float(config.get('f_norm', 0.0)),
                          int(config.get('seed', 0)))
        result = newton_solve(mesh, f, solve_config)
        report = result.to_dict()
        report.update({'f_kind': config.get('f_kind', 'zero'), 'f_norm': float(np.abs(f).max()),
                       'seed': int(config.get('seed', 0)), 'phi0': mesh.phi0})

        v = tau_derivative_field(mesh, float(config.get('dtau', 1e-5)))
        lumped = assemble_lb(mesh).lumped
        report['tau_derivative'] = {'max_abs': float(np.abs(v).max()),
                                    'mass_norm': float(np.sqrt(np.sum(lumped * v * v)))}

        # ||f||_{Sigma_0} <= 2 ||f||_{Sigma_tau}
        if result.norm_ratio > NORM_EQUIVALENCE_BOUND:
            print(f"  ✗ Norm ratio {result.norm_ratio:.4f} exceeds {NORM_EQUIVALENCE_BOUND}")
            return {'success': False, 'error': f"norm ratio {result.norm_ratio:.4g} exceeds {NORM_EQUIVALENCE_BOUND}",
                    'report': report}
        return {'success': True, 'report': report, 'result': result, 'mesh': mesh}

    except NonConvergenceError as e:
        print(f"  ✗ {e}")
        return {'success': False, 'error': str(e), 'history': e.history}
    except Exception as e:
        print(f"  ✗ Solve failed: {e}")
        return {'success': False, 'error': str(e)}


def run_core(config: Dict[str, Any], solve: bool = False) -> Dict[str, Any]:
    """
    Build the approximate core, or the corrected one with solve=True

    Returns:
        Dictionary with success flag, report, vertices, faces and h_tilde
    """
    try:
        n, c0 = int(config['n']), float(config['c0'])
        print(f"\n{'=' * 60}")
        print(f"Core: N={n}, C={c0}, r={config['refinement']}, solve={solve}")
        print(f"{'=' * 60}")

        mesh = build_mesh(puncture_radius(c0), int(config['refinement']))
        if solve:
            f_tilde = boundary_data(mesh, config.get('f_kind', 'zero'), float(config.get('f_norm', 0.0)),
                                    int(config.get('seed', 0)))
            result = solve_core(n, c0, f_tilde, config, mesh=mesh)
            return {'success': True, 'report': result.to_dict(), 'vertices': result.vertices,
                    'faces': result.faces, 'h_tilde': result.h_tilde}

        core = build_core(mesh, n)
        chi = euler_characteristic(core['vertices'], core['faces'])
        loops = _boundary_loops(core['faces'], len(core['vertices']))
        report = {'n': n, 'c0': c0, 'vertices': int(len(core['vertices'])), 'faces': int(len(core['faces'])),
                  'euler_characteristic': chi, 'boundary_loops': loops, 'handles': -chi // 2,
                  'genus': (2 - chi - loops) // 2,
                  'solve': None}
        print(f"  ✓ Approximate core: chi={chi}, loops={loops}, handles={-chi // 2}")
        return {'success': True, 'report': report, 'vertices': core['vertices'],
                'faces': core['faces'], 'h_tilde': core['h_tilde']}

    except Exception as e:
        print(f"  ✗ Core build failed: {e}")
        return {'success': False, 'error': str(e)}
