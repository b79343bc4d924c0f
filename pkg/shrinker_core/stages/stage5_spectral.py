"""
Stage 5: Spectral Analysis
Dirichlet eigenpairs of the round Laplacian on the punctured sphere per
symmetry class, the distance of 2 from that spectrum, eigenfunction
convergence to the coordinate functions, and the comparison functions
of the maximum principle
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from stages.stage3_discretize import (
    SYMMETRIC_CLASS,
    Mesh,
    PUNCTURE_CENTERS,
    SymmetricProjector,
    triangle_gradients,
    build_closed_mesh,
    build_mesh,
)
from utils.config import get_thread_count
from utils.errors import EigenSolverError, InvalidParameterError

SPHERE_NORM2 = 4.0 * math.pi / 3.0
REFERENCE_WINDOW = (0.5, 2.5)
SECOND_EIGENVALUE_BOUND = 6.5
DENSE_LIMIT = 400
ARPACK_MAXITER = 5000
REGION_DISTANCE = 0.45

# coordinate function spanning the eigenvalue-2 space of each class
CLASS_COORDINATE = {
    'xz-inv-yz-anti': 0,
    'xz-anti-yz-inv': 1,
    'xz-inv-yz-inv': 2,
}


@dataclass
class EigenReport:
    """Lowest eigenpairs of -Delta in one symmetry class"""
    phi0: float
    symmetry_class: str
    refinement: int
    eigenvalues: np.ndarray
    residuals: np.ndarray
    eigenvectors: np.ndarray = field(repr=False, default=None)

    @property
    def in_reference_window(self) -> bool:
        return bool(len(self.eigenvalues) and REFERENCE_WINDOW[0] < self.eigenvalues[0] < REFERENCE_WINDOW[1])

    @property
    def second_above_bound(self) -> bool:
        return bool(len(self.eigenvalues) > 1 and self.eigenvalues[1] > SECOND_EIGENVALUE_BOUND)

    def eigenfield(self, index: int) -> np.ndarray:
        return self.eigenvectors[:, index]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'phi0': self.phi0,
            'class': self.symmetry_class,
            'refinement': self.refinement,
            'eigenvalues': [float(v) for v in self.eigenvalues],
            'residuals': [float(r) for r in self.residuals],
            'in_reference_window': self.in_reference_window,
            'second_above_bound': self.second_above_bound,
        }


def _reduced_problem(mesh: Mesh, sym_class: str):
    """Stiffness and consistent mass restricted to the class on the free nodes"""
    operator = mesh.round_operator
    free = mesh.interior
    basis, _ = SymmetricProjector(mesh, sym_class).reduction_basis(free)
    K = (basis.T @ operator.stiffness[free][:, free] @ basis).tocsc()
    M = (basis.T @ operator.mass[free][:, free] @ basis).tocsc()
    return K, M, basis, free


def _solve_eigen(K: sp.spmatrix, M: sp.spmatrix, k: int, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    n = K.shape[0]
    if n == 0:
        raise EigenSolverError("Symmetry class is empty on this mesh", 0)
    k = min(k, n)

    if n <= DENSE_LIMIT or k >= n - 1:
        values, vectors = scipy.linalg.eigh(K.toarray(), M.toarray())
        order = np.argsort(np.abs(values - sigma))[:k]
    else:
        v0 = np.ones(n) / math.sqrt(n)
        try:
            values, vectors = eigsh(K, k=k, M=M, sigma=sigma, which='LM', v0=v0, maxiter=ARPACK_MAXITER)
        except ArpackNoConvergence as e:
            raise EigenSolverError(f"eigsh did not converge for {k} pairs near {sigma}: {e}", ARPACK_MAXITER)
        except ArpackError as e:
            raise EigenSolverError(f"eigsh failed: {e}", ARPACK_MAXITER)
        order = np.argsort(np.abs(values - sigma))

    values, vectors = values[order], vectors[:, order]
    ascending = np.argsort(values)
    return values[ascending], vectors[:, ascending]


def _normalize(mesh: Mesh, u: np.ndarray, reference: Optional[np.ndarray]) -> np.ndarray:
    """Scale to u^T M u = 4 pi / 3 with a positive overlap with the reference"""
    M = mesh.round_operator.mass
    norm2 = float(u @ (M @ u))
    if not norm2 > 0:
        raise EigenSolverError("Eigenvector has zero mass norm", None)
    u = u * math.sqrt(SPHERE_NORM2 / norm2)
    if reference is not None and float(u @ (M @ reference)) < 0:
        u = -u
    return u


def _eigen_report(mesh: Mesh, sym_class: str, k: int, sigma: float) -> EigenReport:
    K, M, basis, free = _reduced_problem(mesh, sym_class)
    values, coefficients = _solve_eigen(K, M, k, sigma)

    residuals = []
    vectors = np.zeros((mesh.n_nodes, len(values)))
    coordinate = CLASS_COORDINATE.get(sym_class)
    reference = mesh.nodes[:, coordinate] if coordinate is not None else mesh.nodes[:, 0]
    for j, (lam, c) in enumerate(zip(values, coefficients.T)):
        Mc = M @ c
        residuals.append(float(np.linalg.norm(K @ c - lam * Mc) / np.linalg.norm(Mc)))
        vectors[free, j] = basis @ c
        vectors[:, j] = _normalize(mesh, vectors[:, j], reference)

    return EigenReport(
        phi0=mesh.phi0, symmetry_class=sym_class, refinement=mesh.refinement,
        eigenvalues=values, residuals=np.array(residuals), eigenvectors=vectors,
    )


def punctured_spectrum(
    phi0: float,
    sym_class: str = SYMMETRIC_CLASS,
    k: int = 6,
    refinement: int = 4,
    mesh: Optional[Mesh] = None
) -> EigenReport:
    """
    Lowest Dirichlet eigenvalues of -Delta on the punctured sphere

    Args:
        phi0: Puncture radius
        sym_class: Symmetry class name
        k: Number of eigenpairs
        refinement: Mesh refinement (ignored when mesh is given)
        mesh: Prebuilt mesh

    Returns:
        EigenReport with eigenvalues in ascending order
    """
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    mesh = mesh or build_mesh(phi0, refinement)
    return _eigen_report(mesh, sym_class, k, sigma=-0.5)


def closed_spectrum(refinement: int = 4, sym_class: str = 'all', k: int = 9) -> EigenReport:
    """Lowest eigenvalues of -Delta on the whole sphere (expected 0, 2 x3, 6 x5, ...)"""
    return _eigen_report(build_closed_mesh(refinement), sym_class, k, sigma=-0.5)


def rayleigh_quotient(mesh: Mesh, values: np.ndarray) -> float:
    """u^T K u / u^T M u for the round operator"""
    operator = mesh.round_operator
    return float(values @ (operator.stiffness @ values) / (values @ (operator.mass @ values)))


def coordinate_overlap(report: EigenReport, mesh: Mesh, tol: float = 0.02) -> Dict[str, float]:
    """
    Share of the coordinate functions x, y, z captured by the eigenvalue-2 space

    Returns:
        {'x': ..., 'y': ..., 'z': ...} in [0, 1]
    """
    M = mesh.round_operator.mass
    cluster = np.abs(report.eigenvalues - 2.0) <= 2.0 * tol
    V = report.eigenvectors[:, cluster]
    gram = V.T @ (M @ V)
    overlap = {}
    for name, axis in (('x', 0), ('y', 1), ('z', 2)):
        f = mesh.nodes[:, axis]
        if V.shape[1] == 0:
            overlap[name] = 0.0
            continue
        projection = np.linalg.solve(gram, V.T @ (M @ f))
        overlap[name] = float(projection @ gram @ projection / (f @ (M @ f)))
    return overlap


def kernel_check(
    phi0: float,
    refinement: int = 4,
    sym_class: str = SYMMETRIC_CLASS,
    mesh: Optional[Mesh] = None
) -> float:
    """
    Distance of 2 from the Dirichlet spectrum in the class

    A positive value means Delta + 2 (and hence Delta_g + |A|^2) is
    invertible on the symmetric Dirichlet space of this discretization.
    """
    mesh = mesh or build_mesh(phi0, refinement)
    K, M, _, _ = _reduced_problem(mesh, sym_class)
    values, _ = _solve_eigen(K, M, 3, sigma=2.0)
    return float(np.min(np.abs(values - 2.0)))


@dataclass
class ComparisonReport:
    """Values of L = Delta + 2 applied to a radial comparison function"""
    beta: float
    phi_j: float
    admissibility: float
    extreme: float
    fd_discrepancy: float
    grid_points: int
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _annulus_grid(phi_j: float, beta: float, grid_points: int):
    side = max(2, int(round(math.sqrt(grid_points))))
    phi = np.linspace(phi_j, beta, side)
    theta = np.linspace(0.0, 2.0 * math.pi, side, endpoint=False)
    return np.meshgrid(phi, theta, indexing='ij')


def _radial_operator_fd(profile, phi: np.ndarray, step: float) -> np.ndarray:
    """Delta + 2 of a radial profile: f'' + cot(phi) f' + 2 f, by central differences"""
    f_plus, f_0, f_minus = profile(phi + step), profile(phi), profile(phi - step)
    return ((f_plus - 2.0 * f_0 + f_minus) / step ** 2
            + (f_plus - f_minus) / (2.0 * step) / np.tan(phi) + 2.0 * f_0)


def admissibility(beta: float) -> float:
    """-cot(beta) + 4 beta, negative for admissible beta"""
    return -1.0 / math.tan(beta) + 4.0 * beta


def supersolution_check(beta: float, phi_j: float, grid_points: int = 10000) -> ComparisonReport:
    """
    (Delta + 2) zeta < 0 for zeta = 2 beta - phi on phi_j < phi < beta

    Args:
        beta: Outer radius, with -cot(beta) + 4 beta < 0
        phi_j: Inner radius
        grid_points: Size of the (phi, theta) grid

    Returns:
        ComparisonReport; extreme is the maximum of (Delta + 2) zeta
    """
    if not 0.0 < phi_j < beta < 0.5 * math.pi:
        raise InvalidParameterError(f"Need 0 < phi_j < beta < pi/2, got phi_j={phi_j}, beta={beta}")
    value = admissibility(beta)
    if value >= 0:
        raise InvalidParameterError(f"beta={beta} is not admissible: -cot(beta) + 4 beta = {value:.4f} >= 0")

    phi, _ = _annulus_grid(phi_j, beta, grid_points)
    L_zeta = -1.0 / np.tan(phi) + 2.0 * (2.0 * beta - phi)
    fd = _radial_operator_fd(lambda p: 2.0 * beta - p, phi, 1e-4)
    extreme = float(L_zeta.max())

    return ComparisonReport(
        beta=beta, phi_j=phi_j, admissibility=value, extreme=extreme,
        fd_discrepancy=float(np.abs(fd - L_zeta).max()), grid_points=int(phi.size), passed=extreme < 0,
    )


def subsolution_check(phi_j: float, beta: float, grid_points: int = 10000) -> ComparisonReport:
    """(Delta + 2) w >= 0 for w = phi - phi_j on the same annulus; extreme is the minimum"""
    if not 0.0 < phi_j < beta < 0.5 * math.pi:
        raise InvalidParameterError(f"Need 0 < phi_j < beta < pi/2, got phi_j={phi_j}, beta={beta}")

    phi, _ = _annulus_grid(phi_j, beta, grid_points)
    L_w = 1.0 / np.tan(phi) + 2.0 * (phi - phi_j)
    fd = _radial_operator_fd(lambda p: p - phi_j, phi, 1e-4)
    extreme = float(L_w.min())

    return ComparisonReport(
        beta=beta, phi_j=phi_j, admissibility=admissibility(beta), extreme=extreme,
        fd_discrepancy=float(np.abs(fd - L_w).max()), grid_points=int(phi.size), passed=extreme >= 0,
    )


def _region_mask(nodes: np.ndarray, distance: float) -> np.ndarray:
    cosines = np.clip(nodes @ PUNCTURE_CENTERS.T, -1.0, 1.0)
    return np.arccos(cosines).min(axis=1) >= distance


def eigenfunction_convergence(
    phi0_list: List[float],
    refinement: int = 4,
    region_distance: float = REGION_DISTANCE
) -> Dict[str, Any]:
    """
    Distance on a fixed region K between the first symmetric eigenfunction and x

    Args:
        phi0_list: Puncture radii, largest first
        refinement: Mesh refinement shared by all runs
        region_distance: K = nodes at geodesic distance >= this from every puncture

    Returns:
        Report with the closed-sphere normalization and per-phi0 L2 and
        gradient sup distances
    """
    closed = build_closed_mesh(refinement)
    x_closed = closed.nodes[:, 0]
    closed_norm2 = float(x_closed @ (closed.round_operator.mass @ x_closed))

    rows = []
    for phi0 in phi0_list:
        mesh = build_mesh(phi0, refinement)
        report = punctured_spectrum(phi0, SYMMETRIC_CLASS, k=1, mesh=mesh)
        error = report.eigenfield(0) - mesh.nodes[:, 0]
        region = _region_mask(mesh.nodes, region_distance)

        l2 = math.sqrt(float(np.sum(mesh.round_operator.lumped[region] * error[region] ** 2)))
        inside = region[mesh.triangles].all(axis=1)
        _, grads = triangle_gradients(mesh.nodes, mesh.triangles[inside])
        gradient = np.einsum('ta,tai->ti', error[mesh.triangles[inside]], grads)
        grad_sup = float(np.linalg.norm(gradient, axis=1).max()) if len(gradient) else 0.0

        rows.append({
            'phi0': float(phi0),
            'eigenvalue': float(report.eigenvalues[0]),
            'l2_distance': l2,
            'gradient_sup_distance': grad_sup,
            'region_nodes': int(region.sum()),
        })

    l2_values = [row['l2_distance'] for row in rows]
    return {
        'refinement': refinement,
        'region_distance': region_distance,
        'closed_norm2': closed_norm2,
        'closed_norm2_relative_error': abs(closed_norm2 - SPHERE_NORM2) / SPHERE_NORM2,
        'rows': rows,
        'l2_decreasing': all(b < a for a, b in zip(l2_values, l2_values[1:])),
    }


def run(
    phi0_list: List[float],
    sym_class: str = SYMMETRIC_CLASS,
    k: int = 6,
    refinement: int = 4,
    closed: bool = False,
    min_gap: float = 0.0
) -> Dict[str, Any]:
    """
    Run a spectral sweep

    Args:
        phi0_list: Puncture radii
        sym_class: Symmetry class name
        k: Eigenpairs per run
        refinement: Mesh refinement
        closed: Also compute the closed-sphere validation spectrum
        min_gap: Smallest acceptable distance of 2 from the spectrum

    Returns:
        Dictionary with reports, gaps and sweep flags
    """
    try:
        print(f"\n{'#' * 60}")
        print(f"Spectral sweep: class={sym_class}, phi0={phi0_list}, r={refinement}")
        print(f"{'#' * 60}")

        def one(phi0: float) -> Dict[str, Any]:
            mesh = build_mesh(phi0, refinement)
            report = punctured_spectrum(phi0, sym_class, k, mesh=mesh)
            gap = kernel_check(phi0, sym_class=sym_class, mesh=mesh)
            data = report.to_dict()
            data['kernel_gap'] = gap
            return data

        with ThreadPoolExecutor(max_workers=get_thread_count()) as pool:
            reports = list(pool.map(one, phi0_list))

        for data in reports:
            marker = '✓' if data['kernel_gap'] > min_gap else '✗'
            window = '' if data['in_reference_window'] else ' (outside (1/2, 5/2))'
            print(f"  {marker} phi0={data['phi0']:.4f}: lambda1={data['eigenvalues'][0]:.6f}{window}, "
                  f"gap={data['kernel_gap']:.6f}")

        ordered = sorted(reports, key=lambda d: -d['phi0'])
        firsts = [d['eigenvalues'][0] for d in ordered]
        result = {
            'success': True,
            'reports': reports,
            'monotone': all(b <= a for a, b in zip(firsts, firsts[1:])),
            'all_gaps_positive': all(d['kernel_gap'] > min_gap for d in reports),
        }

        if closed:
            closed_report = closed_spectrum(refinement)
            result['closed'] = closed_report.to_dict()
            print(f"  ✓ Closed sphere: {np.round(closed_report.eigenvalues, 4).tolist()}")

        return result

    except Exception as e:
        print(f"  ✗ Spectral sweep failed: {e}")
        return {'success': False, 'error': str(e)}
