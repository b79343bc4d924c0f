"""
Validation Utilities - Parameter checks run before any mesh is allocated
"""
import math
from typing import Any, Dict, List, Tuple

from stages.stage1_scherk import puncture_radius

JACOBIAN_MODES = ('chord_at_origin', 'chord_at_tau', 'full')
F_KINDS = ('zero', 'random')
EXPORT_FORMATS = ('obj', 'ply')


def bending_bound(c0: float) -> float:
    """Largest admissible |tau| for truncation C0"""
    return 1.0 / (2.0 * c0)


def validate_c0(c0: float) -> Tuple[bool, List[str]]:
    """
    Validate the truncation constant

    Args:
        c0: Truncation half-width

    Returns:
        Tuple of (is_valid, list_of_issues)
    """
    issues = []
    if not math.isfinite(c0) or c0 <= 0:
        issues.append(f"c0 must be positive, got {c0}")
    elif puncture_radius(c0) >= math.pi / 4:
        issues.append(f"c0={c0} gives phi0={puncture_radius(c0):.4f} >= pi/4 (punctures overlap)")
    return len(issues) == 0, issues


def validate_phi0(phi0: float) -> Tuple[bool, List[str]]:
    """Validate a puncture radius"""
    issues = []
    if not math.isfinite(phi0) or not 0.0 < phi0 < math.pi / 4:
        issues.append(f"phi0 must lie in (0, pi/4), got {phi0}")
    return len(issues) == 0, issues


def validate_refinement(refinement: int) -> Tuple[bool, List[str]]:
    """Validate a mesh refinement level"""
    issues = []
    if not isinstance(refinement, int) or refinement < 0:
        issues.append(f"refinement must be a non-negative integer, got {refinement}")
    elif refinement > 7:
        issues.append(f"refinement {refinement} is too large (max 7)")
    return len(issues) == 0, issues


def validate_tau(tau: float, c0: float) -> Tuple[bool, List[str]]:
    """Validate a bending parameter against |tau| < 1/(2 C0)"""
    issues = []
    eta = bending_bound(c0)
    if not math.isfinite(tau) or abs(tau) >= eta:
        issues.append(f"|tau| must be < 1/(2*c0) = {eta:.6g}, got {tau}")
    return len(issues) == 0, issues


def validate_solve_params(config: Dict[str, Any]) -> Tuple[bool, List[str]]:
    """
    Validate the parameters of a Newton solve

    Args:
        config: Merged run configuration

    Returns:
        Tuple of (is_valid, list_of_issues)
    """
    issues = []
    for check in (validate_c0(config['c0']), validate_refinement(config['refinement'])):
        issues.extend(check[1])
    if not issues:
        issues.extend(validate_tau(config.get('tau', 0.0), config['c0'])[1])

    if config['newton_tol'] <= 0:
        issues.append(f"newton_tol must be positive, got {config['newton_tol']}")
    if int(config['max_iters']) < 1:
        issues.append(f"max_iters must be >= 1, got {config['max_iters']}")
    if config['jacobian_mode'] not in JACOBIAN_MODES:
        issues.append(f"jacobian_mode must be one of {', '.join(JACOBIAN_MODES)}")
    if config.get('f_kind', 'zero') not in F_KINDS:
        issues.append(f"f_kind must be one of {', '.join(F_KINDS)}")
    if config.get('f_norm', 0.0) < 0:
        issues.append("f_norm must be non-negative")

    return len(issues) == 0, issues


def validate_core_params(config: Dict[str, Any]) -> Tuple[bool, List[str]]:
    """Validate the handle count and truncation of a core build"""
    issues = []
    n = config.get('n')
    if not isinstance(n, int) or n < 1:
        issues.append(f"n must be a positive integer, got {n}")
    issues.extend(validate_c0(config['c0'])[1])
    issues.extend(validate_refinement(config['refinement'])[1])
    if not issues and 1.0 / n >= bending_bound(config['c0']):
        issues.append(f"tau = 1/n = {1.0 / n:.6g} violates |tau| < 1/(2*c0) = {bending_bound(config['c0']):.6g}")
    return len(issues) == 0, issues


def validate_export_formats(formats: Any) -> Tuple[bool, List[str]]:
    """Validate a comma-separated export format list"""
    items = [item.strip().lower() for item in str(formats).split(',') if item.strip()]
    issues = [f"Unknown export format '{item}'" for item in items if item not in EXPORT_FORMATS]
    if not items:
        issues.append("No export format given")
    return len(issues) == 0, issues
