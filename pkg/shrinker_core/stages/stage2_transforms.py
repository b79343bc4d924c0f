"""
Stage 2: Bending and Scaling
The bending maps that wrap the yz-plane onto cylinders of radius 1/tau,
the scaling maps that bring that radius to 1, and the geometry of the bent
slab pulled back to the sphere charts of stage 1
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import jax
import jax.numpy as jnp

from stages.stage1_scherk import (
    SurfacePoint,
    chart_point,
    gauss_map,
    immersion_geometry,
    inverse_gauss_array,
    inverse_gauss_jax,
    tangent_frame,
)
from utils.errors import InvalidParameterError

jax.config.update("jax_enable_x64", True)

TAYLOR_SWITCH = 1e-6
BATCH_SIZE = 512


@dataclass
class PulledGeometry:
    """Geometry of the bent slab at one node, in the node's sphere chart"""
    nu0tau: np.ndarray
    g0tau: np.ndarray
    A0tau: np.ndarray
    a0tau: np.ndarray
    gradA: np.ndarray
    X0tau: np.ndarray
    frame: np.ndarray
    christoffel: np.ndarray

    @property
    def mean_curvature(self) -> float:
        return float(np.trace(self.A0tau))


def bend_jax(tau, p):
    """
    Phi_tau(x, y, z) = ((e^{tau w} - 1)/tau, z) with w = x + iy

    Uses expm1 with (cos(tau y) - 1) = -2 sin^2(tau y / 2), and a fourth-order
    Taylor expansion in tau below TAYLOR_SWITCH.
    """
    x, y, z = p[0], p[1], p[2]
    small = jnp.abs(tau) < TAYLOR_SWITCH
    t = jnp.where(small, 1.0, tau)

    bx = jnp.expm1(t * x) / t * jnp.cos(t * y) - 2.0 * jnp.sin(0.5 * t * y) ** 2 / t
    by = jnp.exp(t * x) * jnp.sin(t * y) / t

    # sum_{k=1..5} tau^(k-1) w^k / k!
    re, im = x, y
    tx, ty = x, y
    coeff = 1.0
    for k in range(2, 6):
        re, im = re * x - im * y, re * y + im * x
        coeff = coeff * tau / k
        tx = tx + coeff * re
        ty = ty + coeff * im

    return jnp.stack([jnp.where(small, tx, bx), jnp.where(small, ty, by), z])


_bend_batch = jax.jit(jax.vmap(bend_jax, in_axes=(None, 0)))


def bend(tau: float, p) -> np.ndarray:
    """
    Bending map Phi_tau

    Args:
        tau: Bending parameter
        p: Point (3,) or points (n, 3); a SurfacePoint is accepted

    Returns:
        Bent point(s), same shape as p
    """
    q = p.as_array() if isinstance(p, SurfacePoint) else np.asarray(p, dtype=float)
    if q.shape[-1] != 3:
        raise InvalidParameterError(f"Expected points with 3 coordinates, got shape {q.shape}")
    flat = q.reshape(-1, 3)
    out = np.asarray(_bend_batch(float(tau), jnp.asarray(flat)))
    return out.reshape(q.shape)


def bend_jacobian(tau: float, p) -> np.ndarray:
    """Analytic D Phi_tau: e^{tau x} times a rotation by tau y in the (x, y) block"""
    q = p.as_array() if isinstance(p, SurfacePoint) else np.asarray(p, dtype=float)
    scale = math.exp(tau * q[0])
    c, s = math.cos(tau * q[1]), math.sin(tau * q[1])
    return np.array([
        [scale * c, -scale * s, 0.0],
        [scale * s, scale * c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def scale(tau: float, p) -> np.ndarray:
    """H_tau(x, y, z) = (tau x + 1, tau y, tau z)"""
    if tau == 0:
        raise InvalidParameterError("scale requires tau != 0")
    q = p.as_array() if isinstance(p, SurfacePoint) else np.asarray(p, dtype=float)
    out = tau * q
    out[..., 0] += 1.0
    return out


def period_shift(tau: float, points: np.ndarray) -> np.ndarray:
    """
    Image of the translation y -> y + 2 pi after bending

    Phi_tau(w + 2 pi i) = e^{2 pi i tau} Phi_tau(w) + (e^{2 pi i tau} - 1)/tau
    in the complex (x, y) plane, z unchanged. Normal graphs over the bent slab
    transform the same way.
    """
    pts = np.asarray(points, dtype=float)
    theta = 2.0 * math.pi * tau
    c, s = math.cos(theta), math.sin(theta)
    if abs(tau) < TAYLOR_SWITCH:
        shift_x = -2.0 * math.pi * math.pi * tau
        shift_y = 2.0 * math.pi * (1.0 - (2.0 * math.pi * tau) ** 2 / 6.0)
    else:
        shift_x = -2.0 * math.sin(0.5 * theta) ** 2 / tau
        shift_y = s / tau
    out = pts.copy()
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + shift_x
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + shift_y
    return out


def _pulled_point(n0, e1, e2, tau, lift):
    def X_tau(u):
        return bend_jax(tau, inverse_gauss_jax(chart_point(u, n0, e1, e2), lift))
    return immersion_geometry(X_tau, jnp.zeros(2), n0)


_pulled_kernel = jax.jit(_pulled_point)
_pulled_batch_kernel = jax.jit(jax.vmap(_pulled_point, in_axes=(0, 0, 0, None, 0)))


def pulled_geometry(tau: float, p: SurfacePoint) -> PulledGeometry:
    """
    Geometry of Phi_tau(S) at Phi_tau(p), pulled back to the sphere chart of p

    Args:
        tau: Bending parameter
        p: Interior surface point

    Returns:
        PulledGeometry
    """
    n0 = gauss_map(p)
    e1, e2 = (v[0] for v in tangent_frame(n0))
    geo = {key: np.asarray(value) for key, value in _pulled_kernel(
        jnp.asarray(n0), jnp.asarray(e1), jnp.asarray(e2), float(tau), 0.0).items()}
    return PulledGeometry(
        nu0tau=geo['nu'], g0tau=geo['g'], A0tau=geo['A'], a0tau=geo['a'],
        gradA=geo['gradA'], X0tau=geo['X'], frame=geo['J'], christoffel=geo['gamma'],
    )


@dataclass
class GeometryCache:
    """
    Per-node geometry of the bent slab over a sphere mesh

    Arrays are indexed by node; tensors are components in the node charts.
    """
    tau: float
    nodes: np.ndarray
    surface: np.ndarray
    X: np.ndarray
    J: np.ndarray
    H2: np.ndarray
    nu: np.ndarray
    g: np.ndarray
    a: np.ndarray
    A: np.ndarray
    gamma: np.ndarray
    gradA: np.ndarray
    dnu: np.ndarray
    d2nu: np.ndarray

    @property
    def norm_A2(self) -> np.ndarray:
        return np.einsum('nij,nji->n', self.A, self.A)

    @property
    def conformal_factor(self) -> np.ndarray:
        """Half |A|^2, so that nu* g_S2 = conformal_factor * g"""
        return 0.5 * self.norm_A2

    @property
    def g_inv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    def principal_curvature_bound(self) -> np.ndarray:
        """max |kappa| per node (A is g-self-adjoint, eigenvalues real)"""
        tr = np.trace(self.A, axis1=1, axis2=2)
        det = np.linalg.det(self.A)
        disc = np.sqrt(np.maximum(0.25 * tr ** 2 - det, 0.0))
        return np.abs(0.5 * tr) + disc

    def at(self, i: int) -> PulledGeometry:
        return PulledGeometry(
            nu0tau=self.nu[i], g0tau=self.g[i], A0tau=self.A[i], a0tau=self.a[i],
            gradA=self.gradA[i], X0tau=self.X[i], frame=self.J[i], christoffel=self.gamma[i],
        )


def build_geometry_cache(
    nodes: np.ndarray,
    frames: tuple,
    tau: float,
    lift: Optional[np.ndarray] = None
) -> GeometryCache:
    """
    Evaluate the pulled geometry at every node

    Nodes are processed in fixed-size padded batches so one compiled kernel
    serves every mesh size.

    Args:
        nodes: (n, 3) sphere nodes away from the punctures
        frames: (e1, e2) chart frames, each (n, 3)
        tau: Bending parameter
        lift: Optional per-node number of 2 pi periods added to y

    Returns:
        GeometryCache
    """
    nodes = np.asarray(nodes, dtype=float)
    e1, e2 = frames
    n = len(nodes)
    lift = np.zeros(n) if lift is None else np.asarray(lift, dtype=float)

    chunks: Dict[str, list] = {}
    for start in range(0, n, BATCH_SIZE):
        stop = min(start + BATCH_SIZE, n)
        pad = BATCH_SIZE - (stop - start)
        take = np.concatenate([np.arange(start, stop), np.full(pad, start, dtype=int)])
        out = _pulled_batch_kernel(
            jnp.asarray(nodes[take]), jnp.asarray(e1[take]), jnp.asarray(e2[take]),
            float(tau), jnp.asarray(lift[take]),
        )
        for key, value in out.items():
            chunks.setdefault(key, []).append(np.asarray(value)[:stop - start])

    geo = {key: np.concatenate(parts, axis=0) for key, parts in chunks.items()}
    surface = inverse_gauss_array(nodes)
    surface[:, 1] += 2.0 * math.pi * lift

    return GeometryCache(
        tau=float(tau), nodes=nodes, surface=surface,
        X=geo['X'], J=geo['J'], H2=geo['H2'], nu=geo['nu'], g=geo['g'], a=geo['a'],
        A=geo['A'], gamma=geo['gamma'], gradA=geo['gradA'], dnu=geo['dnu'], d2nu=geo['d2nu'],
    )
