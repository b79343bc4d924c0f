"""
Stage 7: Verification Suite
Analytic identities checked numerically: minimality of S, conformality of
the Gauss map, the scaling identity of the residual, second-order accuracy
of the linearization and the supersolution inequality
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from stages.stage1_scherk import puncture_radius, shape_data, surface_point
from stages.stage3_discretize import SymmetricProjector, build_mesh
from stages.stage4_graphgeom import graph_operator
from stages.stage5_spectral import subsolution_check, supersolution_check
from utils.config import get_thread_count
from utils.errors import InvalidParameterError

CHECK_NAMES = ('minimality', 'conformality', 'scaling_identity', 'linearization_order', 'supersolution')

# size of the perturbation injected by --break
BREAK_SIZE = 1e-3
# constant added to the comparison function when supersolution is broken
BREAK_SHIFT = 3.0

SAMPLE_XZ = ((0.3, 0.2), (-0.4, 0.5), (0.8, -0.6), (0.1, 1.2), (-1.0, -0.3), (0.0, 0.0))
FD_STEPS = (2e-2, 1e-2, 5e-3)
MIN_FD_ORDER = 1.8
MINIMALITY_TOL = 1e-9
CONFORMALITY_TOL = 1e-6
IDENTITY_TAU = 1.0 / 16.0
IDENTITY_SAMPLES = 5
IDENTITY_AMPLITUDE = 0.05
LINEARIZATION_EPS = (1e-2, 1e-3, 1e-4)
LINEARIZATION_SPREAD = 3.0


def sample_points() -> List:
    """Points of both sheets of S used by the pointwise checks"""
    return [surface_point(x, z, sheet) for sheet in ('A', 'B') for x, z in SAMPLE_XZ]


def check_minimality(config: Dict[str, Any], broken: bool = False) -> Dict[str, Any]:
    """
    H = 0 on S: exact derivatives give round-off, central differences
    converge to zero at second order
    """
    offset = BREAK_SIZE if broken else 0.0
    points = sample_points()
    analytic = max(abs(shape_data(p).mean_curvature + offset) for p in points)
    errors = [
        max(abs(shape_data(p, method='fd', step=step).mean_curvature + offset) for p in points)
        for step in FD_STEPS
    ]
    orders = [math.log(e0 / e1) / math.log(s0 / s1)
              for (e0, e1), (s0, s1) in zip(zip(errors, errors[1:]), zip(FD_STEPS, FD_STEPS[1:]))]
    return {
        'passed': analytic <= MINIMALITY_TOL and min(orders) >= MIN_FD_ORDER,
        'max_abs_H': analytic,
        'fd_errors': errors,
        'fd_orders': orders,
        'thresholds': {'max_abs_H': MINIMALITY_TOL, 'min_fd_order': MIN_FD_ORDER},
    }


def check_conformality(config: Dict[str, Any], broken: bool = False) -> Dict[str, Any]:
    """nu* g_S2 = (|A|^2 / 2) g at every sample point"""
    offset = BREAK_SIZE if broken else 0.0
    worst = 0.0
    for p in sample_points():
        data = shape_data(p)
        pulled = data.nu_metric + offset * np.eye(2)
        defect = np.linalg.norm(pulled - 0.5 * data.norm_A2 * data.g) / np.linalg.norm(data.g)
        worst = max(worst, float(defect))
    return {
        'passed': worst <= CONFORMALITY_TOL,
        'max_relative_defect': worst,
        'thresholds': {'max_relative_defect': CONFORMALITY_TOL},
    }


def _identity_mesh(config: Dict[str, Any]):
    return build_mesh(puncture_radius(float(config['c0'])), int(config['refinement']))


def check_scaling_identity(config: Dict[str, Any], broken: bool = False, mesh=None) -> Dict[str, Any]:
    """F(h, tau) = tau (H + Y.nu) of the rescaled graph, for random symmetric h"""
    mesh = mesh or _identity_mesh(config)
    op = graph_operator(mesh)
    projector = SymmetricProjector(mesh)
    rng = np.random.default_rng(int(config['seed']))
    tol = float(config['identity_tol'])

    worst = 0.0
    for _ in range(IDENTITY_SAMPLES):
        h = projector.apply(rng.standard_normal(mesh.n_nodes))
        h *= IDENTITY_AMPLITUDE / np.abs(h).max()
        F = op.residual(h, IDENTITY_TAU)
        if broken:
            F[mesh.interior] += BREAK_SIZE
        R = op.rescaled_residual(h, IDENTITY_TAU)
        worst = max(worst, float(np.abs(F - IDENTITY_TAU * R).max()))
    return {
        'passed': worst <= tol,
        'max_abs_difference': worst,
        'tau': IDENTITY_TAU,
        'samples': IDENTITY_SAMPLES,
        'thresholds': {'max_abs_difference': tol},
    }


def check_linearization_order(config: Dict[str, Any], broken: bool = False, mesh=None) -> Dict[str, Any]:
    """||F(eps u, 0) - eps L u|| / eps^2 stays bounded as eps shrinks"""
    mesh = mesh or _identity_mesh(config)
    op = graph_operator(mesh)
    u = SymmetricProjector(mesh).apply(mesh.nodes[:, 0] * (1.0 + mesh.nodes[:, 2] ** 2))
    Lu = op.linearized @ u

    quotients = []
    for eps in LINEARIZATION_EPS:
        F = op.residual(eps * u, 0.0)
        if broken:
            F[mesh.interior] += BREAK_SIZE
        quotients.append(op.norm(F - eps * Lu) / eps ** 2)
    spread = max(quotients) / min(quotients) if min(quotients) > 0 else math.inf
    return {
        'passed': spread <= LINEARIZATION_SPREAD,
        'quotients': quotients,
        'spread': spread,
        'thresholds': {'spread': LINEARIZATION_SPREAD},
    }


def check_supersolution(config: Dict[str, Any], broken: bool = False) -> Dict[str, Any]:
    """(Delta + 2) zeta < 0 on the annulus, with the subsolution as companion"""
    beta, phi_j = float(config['supersolution_beta']), float(config['supersolution_phi_j'])
    grid_points = int(config['grid_points'])
    upper = supersolution_check(beta, phi_j, grid_points)
    lower = subsolution_check(phi_j, beta, grid_points)
    # L(zeta + c) = L(zeta) + 2c
    extreme = upper.extreme + (2.0 * BREAK_SHIFT if broken else 0.0)
    return {
        'passed': upper.admissibility < 0 and extreme < 0 and lower.passed,
        'admissibility': upper.admissibility,
        'max_L_zeta': extreme,
        'min_L_w': lower.extreme,
        'fd_discrepancy': max(upper.fd_discrepancy, lower.fd_discrepancy),
        'grid_points': upper.grid_points,
        'thresholds': {'admissibility': 0.0, 'max_L_zeta': 0.0, 'min_L_w': 0.0},
    }


CHECKS: Dict[str, Callable[..., Dict[str, Any]]] = {
    'minimality': check_minimality,
    'conformality': check_conformality,
    'scaling_identity': check_scaling_identity,
    'linearization_order': check_linearization_order,
    'supersolution': check_supersolution,
}


def run_suite(
    config: Dict[str, Any],
    broken: Optional[List[str]] = None,
    checks: Optional[List[str]] = None
) -> Dict[str, Any]:
    """
    Run the identity checks concurrently

    Args:
        config: Run configuration (c0, refinement, seed, identity_tol, supersolution_*, grid_points)
        broken: Check names to perturb
        checks: Subset of CHECK_NAMES (all by default)

    Returns:
        {'passed', 'failed', 'checks'} with per-check metrics in CHECK_NAMES order
    """
    broken = list(broken or [])
    names = list(checks or CHECK_NAMES)
    unknown = sorted(set(broken + names) - set(CHECK_NAMES))
    if unknown:
        raise InvalidParameterError(f"Unknown checks: {', '.join(unknown)}; valid: {', '.join(CHECK_NAMES)}")

    needs_mesh = {'scaling_identity', 'linearization_order'} & set(names)
    mesh = _identity_mesh(config) if needs_mesh else None
    if mesh is not None:
        graph_operator(mesh)

    def one(name: str) -> Dict[str, Any]:
        kwargs = {'mesh': mesh} if name in needs_mesh else {}
        try:
            outcome = CHECKS[name](config, name in broken, **kwargs)
        except Exception as e:
            outcome = {'passed': False, 'error': str(e)}
        outcome['broken'] = name in broken
        return outcome

    with ThreadPoolExecutor(max_workers=get_thread_count()) as pool:
        outcomes = list(pool.map(one, names))

    results = dict(zip(names, outcomes))
    failed = [name for name in names if not results[name]['passed']]
    for name in names:
        marker = '✓' if results[name]['passed'] else '✗'
        note = ' (perturbed)' if results[name]['broken'] else ''
        print(f"  {marker} {name}{note}")

    return {'passed': not failed, 'failed': failed, 'checks': results}


def run(config: Dict[str, Any], broken: Optional[List[str]] = None) -> Dict[str, Any]:
    """
    Execute the verification suite

    Returns:
        Stage output dictionary; success is True only when every check passes
    """
    try:
        print(f"\n{'#' * 60}")
        print(f"Verification suite: {len(CHECK_NAMES)} checks, c0={config['c0']}, r={config['refinement']}")
        print(f"{'#' * 60}")

        report = run_suite(config, broken)
        if report['failed']:
            print(f"✗ Verification failed: {', '.join(report['failed'])}")
        else:
            print("✓ All identities verified")
        return {'success': report['passed'], 'report': report}

    except Exception as e:
        print(f"✗ Verification suite failed: {e}")
        return {'success': False, 'error': str(e)}
