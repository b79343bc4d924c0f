"""
Stage 1: Scherk Surface
Exact representation of the slab sin y = sinh x sinh z, its symmetries,
its Gauss map onto the punctured sphere and the inverse of that map
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import jax
import jax.numpy as jnp

from utils.errors import (
    ChartDegeneracyError,
    InvalidParameterError,
    OffSurfaceError,
    PunctureProximityError,
)

jax.config.update("jax_enable_x64", True)

SURFACE_TOL = 1e-10
HALF_PI = 0.5 * math.pi
XZ_CHART_LIMIT = 1.0 - 1e-6

ArrayLike = Union[np.ndarray, list, tuple]


@dataclass(frozen=True)
class SurfacePoint:
    """Point of the fundamental slab, y in (-pi/2, 3pi/2]"""
    x: float
    y: float
    z: float

    @property
    def sheet(self) -> str:
        return 'A' if self.y <= HALF_PI else 'B'

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class BendParams:
    """Bending parameter, truncation and handle count"""
    tau: float
    C0: float
    N: int = 1
    eta: Optional[float] = None

    def __post_init__(self):
        if self.C0 <= 0:
            raise InvalidParameterError(f"C0 must be positive, got {self.C0}")
        if self.N < 1:
            raise InvalidParameterError(f"N must be a positive integer, got {self.N}")
        bound = 1.0 / (2.0 * self.C0)
        if self.eta is None:
            object.__setattr__(self, 'eta', bound)
        if not 0.0 < self.eta <= bound:
            raise InvalidParameterError(f"eta must lie in (0, 1/(2 C0)] = (0, {bound:.6g}], got {self.eta}")
        if abs(self.tau) >= self.eta:
            raise InvalidParameterError(f"|tau| must be < eta = {self.eta:.6g}, got {self.tau}")

    @property
    def phi0(self) -> float:
        return puncture_radius(self.C0)


@dataclass
class ShapeData:
    """Intrinsic and extrinsic data of S at one point, in one chart"""
    g: np.ndarray
    a: np.ndarray
    A: np.ndarray
    norm_A2: float
    nu_metric: np.ndarray
    nu: np.ndarray
    position: np.ndarray
    chart: str = 'sphere'
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def mean_curvature(self) -> float:
        return float(np.trace(self.A))


def puncture_radius(c0: float) -> float:
    """phi0 = arccos(tanh C0)"""
    return math.acos(math.tanh(c0))


def truncation_from_radius(phi0: float) -> float:
    """Inverse of puncture_radius"""
    return math.atanh(math.cos(phi0))


def narrowest_hole_half_width() -> float:
    """Half-width of the narrowest hole of S"""
    return 0.5 * min(math.pi, 2.0 * math.sqrt(2.0) * math.asinh(1.0))


def lift_y(y: float) -> float:
    """Lift y into the slab interval; -pi/2 stays on sheet A"""
    while y < -HALF_PI:
        y += 2.0 * math.pi
    while y > 1.5 * math.pi:
        y -= 2.0 * math.pi
    return y


def _coords(p) -> np.ndarray:
    if isinstance(p, SurfacePoint):
        return p.as_array()
    return np.asarray(p, dtype=float)


def surface_point(x: float, z: float, sheet: str = 'A') -> SurfacePoint:
    """
    Point of S above (x, z) on the requested sheet

    Args:
        x: Ambient x
        z: Ambient z
        sheet: 'A' (y in [-pi/2, pi/2]) or 'B' (y in (pi/2, 3pi/2])

    Returns:
        The surface point
    """
    s = math.sinh(x) * math.sinh(z)
    if abs(s) > 1.0:
        raise OffSurfaceError(f"No point of S above (x, z) = ({x}, {z}): |sinh x sinh z| = {abs(s):.4f} > 1")
    y = math.asin(s)
    if sheet == 'B':
        y = math.pi - y
    elif sheet != 'A':
        raise InvalidParameterError(f"sheet must be 'A' or 'B', got {sheet}")
    return SurfacePoint(x, lift_y(y), z)


def implicit_value(p) -> Union[float, np.ndarray]:
    """sin y - sinh x sinh z; zero exactly on S"""
    q = _coords(p)
    value = np.sin(q[..., 1]) - np.sinh(q[..., 0]) * np.sinh(q[..., 2])
    return float(value) if np.ndim(value) == 0 else value


def _require_on_surface(q: np.ndarray, tol: float) -> None:
    residual = np.abs(np.atleast_1d(implicit_value(q)))
    if residual.size and residual.max() > tol:
        worst = int(np.argmax(residual))
        raise OffSurfaceError(f"Point {np.atleast_2d(q)[worst].tolist()} is off S (|implicit| = {residual[worst]:.3e})")


def gauss_map(p, tol: float = SURFACE_TOL) -> np.ndarray:
    """
    Unit normal of S, nu = (-tanh z, cos y / (cosh x cosh z), -tanh x)

    Args:
        p: SurfacePoint or array (..., 3) of points on S
        tol: Allowed |implicit_value|

    Returns:
        Unit normal(s), shape (..., 3)
    """
    q = _coords(p)
    _require_on_surface(q, tol)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    nu = np.stack([-np.tanh(z), np.cos(y) / (np.cosh(x) * np.cosh(z)), -np.tanh(x)], axis=-1)
    return nu / np.linalg.norm(nu, axis=-1, keepdims=True)


def inverse_gauss_array(n: np.ndarray, phi0: Optional[float] = None) -> np.ndarray:
    """Vectorized inverse Gauss map returning (..., 3) slab coordinates"""
    n = np.asarray(n, dtype=float)
    limit = math.cos(phi0) if phi0 is not None else 1.0
    reach = np.maximum(np.abs(n[..., 0]), np.abs(n[..., 2]))
    if np.any(reach >= limit):
        worst = np.atleast_2d(n)[int(np.argmax(np.atleast_1d(reach)))]
        raise PunctureProximityError(
            f"Sphere point {worst.tolist()} is within the puncture radius (|n_x| or |n_z| >= {limit:.12g})"
        )
    x = -np.arctanh(n[..., 2])
    z = -np.arctanh(n[..., 0])
    y = np.arctan2(np.sinh(x) * np.sinh(z), n[..., 1] * np.cosh(x) * np.cosh(z))
    y = np.where(y < -HALF_PI, y + 2.0 * math.pi, y)
    return np.stack([x, y, z], axis=-1)


def inverse_gauss(n: ArrayLike, phi0: Optional[float] = None) -> SurfacePoint:
    """
    Surface point with Gauss image n

    Args:
        n: Unit vector of the punctured sphere
        phi0: Puncture radius; None only excludes the four puncture centers

    Returns:
        SurfacePoint on the slab
    """
    n = np.asarray(n, dtype=float)
    if n.shape != (3,):
        raise InvalidParameterError(f"Expected a 3-vector, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise InvalidParameterError(f"Expected a unit vector, got |n| = {np.linalg.norm(n):.15g}")
    x, y, z = inverse_gauss_array(n, phi0)
    return SurfacePoint(float(x), float(y), float(z))


def symmetry_images(p: SurfacePoint) -> Tuple[SurfacePoint, SurfacePoint]:
    """
    Images under rho (rotation by pi about the x-axis) and sigma (mirror y = pi/2)

    Returns:
        (rho(p), sigma(p))
    """
    _require_on_surface(p.as_array(), SURFACE_TOL)
    rho = SurfacePoint(p.x, lift_y(-p.y), -p.z)
    sigma = SurfacePoint(p.x, lift_y(math.pi - p.y), p.z)
    return rho, sigma


def equator_arc(n: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """
    Classify sphere points on the equator n_y = 0

    The mirror line y = pi/2 of S maps onto the arcs with n_x n_z > 0, the
    line y = -pi/2 (= 3pi/2) onto the arcs with n_x n_z < 0.

    Returns:
        +1 / -1 on those arcs, 0 elsewhere
    """
    n = np.atleast_2d(np.asarray(n, dtype=float))
    on_equator = np.abs(n[:, 1]) <= tol
    product = n[:, 0] * n[:, 2]
    return np.where(on_equator & (product > tol), 1, np.where(on_equator & (product < -tol), -1, 0))


def tangent_frame(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Right-handed orthonormal frames (e1, e2) with e1 x e2 = n

    e1 is the tangential part of the z-axis, or of the x-axis near the poles.
    """
    n = np.atleast_2d(np.asarray(n, dtype=float))
    axis = np.where(np.abs(n[:, 2:3]) > 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 1.0]]))
    e1 = axis - np.sum(axis * n, axis=1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


# Differentiable pieces shared with the bending stage

def chart_point(u, n0, e1, e2):
    """Gnomonic chart of the sphere centred at n0"""
    p = n0 + u[0] * e1 + u[1] * e2
    return p / jnp.sqrt(jnp.dot(p, p))


def inverse_gauss_jax(n, lift=0.0):
    """inverse_gauss_array for jax tracing; lift adds whole periods 2*pi to y"""
    x = -jnp.arctanh(n[2])
    z = -jnp.arctanh(n[0])
    y = jnp.arctan2(jnp.sinh(x) * jnp.sinh(z), n[1] * jnp.cosh(x) * jnp.cosh(z))
    y = jnp.where(y < -HALF_PI, y + 2.0 * jnp.pi, y) + 2.0 * jnp.pi * lift
    return jnp.stack([x, y, z])


def immersion_geometry(X_fn: Callable, u0, n_ref) -> Dict[str, jnp.ndarray]:
    """
    Exact local geometry of an immersion u -> X_fn(u) at u0

    The normal is oriented to agree with n_ref. Index conventions:
    H2[m, i, j] = d_ij X^m, gamma[k, i, j] = Gamma^k_ij,
    gradA[k, i, j] = (nabla_k A)^i_j, d2nu[m, i, j] = d_ij nu^m.
    """
    jac = jax.jacfwd(X_fn)
    hess = jax.jacfwd(jac)

    J0 = jac(u0)
    sgn = jnp.sign(jnp.dot(jnp.cross(J0[:, 0], J0[:, 1]), n_ref))

    def normal(u):
        J = jac(u)
        c = jnp.cross(J[:, 0], J[:, 1])
        return sgn * c / jnp.sqrt(jnp.dot(c, c))

    def shape_operator(u):
        J = jac(u)
        a = jnp.einsum('mij,m->ij', hess(u), normal(u))
        return jnp.linalg.solve(J.T @ J, a)

    J = J0
    H2 = hess(u0)
    nu = normal(u0)
    g = J.T @ J
    a = jnp.einsum('mij,m->ij', H2, nu)
    A = jnp.linalg.solve(g, a)
    ginv = jnp.linalg.inv(g)
    gamma = jnp.einsum('kl,mij,ml->kij', ginv, H2, J)
    dA = jax.jacfwd(shape_operator)(u0)
    gradA = (
        jnp.transpose(dA, (2, 0, 1))
        + jnp.einsum('ikl,lj->kij', gamma, A)
        - jnp.einsum('lkj,il->kij', gamma, A)
    )
    dnu = jax.jacfwd(normal)(u0)
    d2nu = jax.jacfwd(jax.jacfwd(normal))(u0)

    return {
        'X': X_fn(u0), 'J': J, 'H2': H2, 'nu': nu, 'g': g, 'a': a, 'A': A,
        'gamma': gamma, 'gradA': gradA, 'dnu': dnu, 'd2nu': d2nu,
    }


def _sphere_chart_geometry(n0, e1, e2):
    def X0(u):
        return inverse_gauss_jax(chart_point(u, n0, e1, e2))
    return immersion_geometry(X0, jnp.zeros(2), n0)


def _xz_chart_geometry(xz, sheet_sign, n_ref):
    def X0(u):
        s = jnp.sinh(u[0]) * jnp.sinh(u[1])
        base = jnp.arcsin(s)
        y = jnp.where(sheet_sign > 0, base, jnp.pi - base)
        return jnp.stack([u[0], y, u[1]])
    return immersion_geometry(X0, xz, n_ref)


_sphere_kernel = jax.jit(_sphere_chart_geometry)
_xz_kernel = jax.jit(_xz_chart_geometry)
_sphere_position = jax.jit(lambda u, n0, e1, e2: inverse_gauss_jax(chart_point(u, n0, e1, e2)))


def _to_shape_data(geo: Dict[str, jnp.ndarray], chart: str) -> ShapeData:
    geo = {key: np.asarray(value) for key, value in geo.items()}
    A = geo['A']
    return ShapeData(
        g=geo['g'],
        a=geo['a'],
        A=A,
        norm_A2=float(np.trace(A @ A)),
        nu_metric=geo['dnu'].T @ geo['dnu'],
        nu=geo['nu'],
        position=geo['X'],
        chart=chart,
        extras={'gamma': geo['gamma'], 'gradA': geo['gradA'], 'J': geo['J']},
    )


def _fd_shape_data(p: SurfacePoint, step: float) -> ShapeData:
    """Central finite differences of the sphere-chart immersion"""
    n0 = gauss_map(p)
    e1, e2 = (v[0] for v in tangent_frame(n0))
    n0, e1, e2 = jnp.asarray(n0), jnp.asarray(e1), jnp.asarray(e2)

    def X(a, b):
        return np.asarray(_sphere_position(jnp.array([a, b]), n0, e1, e2))

    def nu_chart(a, b):
        return np.asarray(chart_point(jnp.array([a, b]), n0, e1, e2))

    d = step
    X00 = X(0.0, 0.0)
    Xa = (X(d, 0.0) - X(-d, 0.0)) / (2 * d)
    Xb = (X(0.0, d) - X(0.0, -d)) / (2 * d)
    Xaa = (X(d, 0.0) - 2 * X00 + X(-d, 0.0)) / d ** 2
    Xbb = (X(0.0, d) - 2 * X00 + X(0.0, -d)) / d ** 2
    Xab = (X(d, d) - X(d, -d) - X(-d, d) + X(-d, -d)) / (4 * d ** 2)

    J = np.stack([Xa, Xb], axis=1)
    c = np.cross(Xa, Xb)
    nu = c / np.linalg.norm(c)
    if np.dot(nu, np.asarray(n0)) < 0:
        nu = -nu
    g = J.T @ J
    a = np.array([[Xaa @ nu, Xab @ nu], [Xab @ nu, Xbb @ nu]])
    A = np.linalg.solve(g, a)

    dnu = np.stack([
        (nu_chart(d, 0.0) - nu_chart(-d, 0.0)) / (2 * d),
        (nu_chart(0.0, d) - nu_chart(0.0, -d)) / (2 * d),
    ], axis=1)

    return ShapeData(g=g, a=a, A=A, norm_A2=float(np.trace(A @ A)), nu_metric=dnu.T @ dnu,
                     nu=nu, position=X00, chart='sphere-fd')


def shape_data(
    p: SurfacePoint,
    method: str = 'analytic',
    step: float = 1e-3,
    chart: str = 'sphere'
) -> ShapeData:
    """
    Metric, second fundamental form and shape operator of S at p

    Args:
        p: Interior surface point
        method: 'analytic' (automatic differentiation) or 'fd' (central differences)
        step: Finite-difference step for method='fd'
        chart: 'sphere' (gnomonic chart of the Gauss image) or 'xz'

    Returns:
        ShapeData in the chosen chart
    """
    q = p.as_array()
    _require_on_surface(q, SURFACE_TOL)

    if method == 'fd':
        return _fd_shape_data(p, step)
    if method != 'analytic':
        raise InvalidParameterError(f"method must be 'analytic' or 'fd', got {method}")

    n0 = gauss_map(p)
    if chart == 'sphere':
        e1, e2 = (v[0] for v in tangent_frame(n0))
        geo = _sphere_kernel(jnp.asarray(n0), jnp.asarray(e1), jnp.asarray(e2))
        return _to_shape_data(geo, 'sphere')

    if chart == 'xz':
        if abs(math.sinh(p.x) * math.sinh(p.z)) > XZ_CHART_LIMIT:
            raise ChartDegeneracyError(
                f"(x, z) chart degenerates at {q.tolist()}: |sinh x sinh z| > {XZ_CHART_LIMIT}; use the sphere chart"
            )
        sheet_sign = 1.0 if p.sheet == 'A' else -1.0
        geo = _xz_kernel(jnp.array([p.x, p.z]), sheet_sign, jnp.asarray(n0))
        return _to_shape_data(geo, 'xz')

    raise InvalidParameterError(f"chart must be 'sphere' or 'xz', got {chart}")
