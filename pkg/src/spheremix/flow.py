"""Exponential-map normalizing flow layers on S2.

One layer transports x along the Riemannian gradient of a radial wrapping
potential built from p exponential bumps:

    phi(x)  = sum_i (eta_i / beta_i) * exp(beta_i * (<x, m_i> - 1))
    T(x)    = exp_x( grad phi(x) )

with beta_i > 0, unit centers m_i, and convex weights eta_i (sum 1).  A
component is a composition of K such layers applied to the uniform base
density, so its log density at x is

    log f(x) = -log(4 pi) + sum_k log |det J_k|

where J_k is the 2x2 tangent-space Jacobian of layer k evaluated along the
trajectory of x.  The Jacobian determinant is assembled in closed form from
the derivatives of the potential gradient and of the exponential map; its
absolute value does not depend on the choice of tangent bases.

Heavy evaluations (Jacobian log-determinants, component log densities) run
through jitted jax kernels; inputs and outputs are plain numpy arrays.
"""

from dataclasses import dataclass

import numpy as np
import jax
import jax.numpy as jnp
from jax import lax

from . import geometry

LOG_4PI = float(np.log(4.0 * np.pi))

# |det J| below this is treated as leaving the diffeomorphism regime.
DEGENERATE_DET = 1e-300
_DEGENERATE_LOGDET = float(np.log(DEGENERATE_DET))

# Batched kernel calls are padded to a multiple of this so jit recompiles
# only per (K, p) shape, not per batch size.
_CHUNK = 4096


class DegenerateJacobianError(RuntimeError):
    """A layer Jacobian determinant fell below DEGENERATE_DET."""


@dataclass(frozen=True)
class LayerParams:
    """Parameters of one flow layer: betas (p,), centers (p, 3), etas (p,).

    Centers are renormalized to unit length at construction; centers that
    are already unit within 1e-12 are kept bit for bit, so reconstructing a
    layer from stored parameters is exact.  Requires all betas > 0, all
    etas > 0, and sum(etas) = 1 within 1e-10.
    """

    betas: np.ndarray
    centers: np.ndarray
    etas: np.ndarray

    def __post_init__(self):
        betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        etas = np.atleast_1d(np.asarray(self.etas, dtype=float))
        centers = np.asarray(self.centers, dtype=float).reshape(len(betas), 3)
        if np.any(np.abs(np.linalg.norm(centers, axis=-1) - 1.0) > 1e-12):
            centers = geometry.normalize(centers)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a nonempty 1-d array")
        if not (betas.shape == etas.shape and centers.shape == (betas.size, 3)):
            raise ValueError("betas, centers, etas shapes disagree")
        if not np.all(betas > 0):
            raise ValueError("all betas must be positive")
        if not np.all(etas > 0):
            raise ValueError("all etas must be positive")
        if abs(etas.sum() - 1.0) > 1e-10:
            raise ValueError("etas must sum to 1 within 1e-10")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "etas", etas)

    @property
    def p(self):
        return self.betas.size


@dataclass(frozen=True)
class ComponentParams:
    """An ordered composition of K flow layers sharing one p."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a component needs at least one layer")
        p = layers[0].p
        if any(l.p != p for l in layers):
            raise ValueError("all layers of a component must share p")
        object.__setattr__(self, "layers", layers)

    @property
    def K(self):
        return len(self.layers)

    @property
    def p(self):
        return self.layers[0].p

    def stacked(self):
        """Parameters as arrays: betas (K, p), centers (K, p, 3), etas (K, p)."""
        return (
            np.stack([l.betas for l in self.layers]),
            np.stack([l.centers for l in self.layers]),
            np.stack([l.etas for l in self.layers]),
        )

    @classmethod
    def from_stacked(cls, betas, centers, etas):
        return cls(tuple(
            LayerParams(b, c, e) for b, c, e in zip(betas, centers, etas)
        ))


# ---------------------------------------------------------------------------
# numpy-side evaluation of the potential and the transport map
# ---------------------------------------------------------------------------

def potential(x, layer):
    """Wrapping potential phi(x), for x of shape (3,) or (N, 3).

    phi(x) = sum_i (eta_i / beta_i) exp(beta_i (<x, m_i> - 1)), which is
    strictly positive and maximal where x coincides with every center.
    """
    x = np.asarray(x, dtype=float)
    t = x @ layer.centers.T                       # (..., p)
    terms = (layer.etas / layer.betas) * np.exp(layer.betas * (t - 1.0))
    return terms.sum(axis=-1)


def _ambient_gradient(x, layer):
    t = x @ layer.centers.T
    coef = layer.etas * np.exp(layer.betas * (t - 1.0))
    return coef @ layer.centers                   # (..., 3)


def potential_gradient(x, layer):
    """Riemannian gradient of the potential at x: (I - xx^T) grad phi.

    The convex-weight normalization sum(eta) = 1 bounds the gradient norm
    strictly below 1, well inside the pi/2 wrapping region; the bound is
    still asserted at runtime as a defensive check.
    """
    x = np.asarray(x, dtype=float)
    g = geometry.project_to_tangent(x, _ambient_gradient(x, layer))
    if np.any(np.linalg.norm(g, axis=-1) >= np.pi / 2):
        raise ValueError(
            "potential gradient norm reached pi/2; parameters left the "
            "valid wrapping region")
    return g


def layer_forward(x, layer):
    """Apply one layer's transport map exp_x(grad phi(x))."""
    x = np.asarray(x, dtype=float)
    return geometry.exp_map(x, potential_gradient(x, layer))


# ---------------------------------------------------------------------------
# jax kernels
# ---------------------------------------------------------------------------

def _sinc(r):
    # sin(r)/r with a series below 1e-4; jnp.where on both branches keeps
    # the expression safe under jit and under differentiation.
    small = r < 1e-4
    r2 = r * r
    rs = jnp.where(small, 1.0, r)
    return jnp.where(small, 1.0 - r2 / 6.0 + r2 * r2 / 120.0, jnp.sin(rs) / rs)


def _dcos(r):
    # (cos r - sinc r) / r^2, the curvature factor of the exp-map Jacobian;
    # series below 1e-2 (the direct quotient loses digits near 0).
    small = r < 1e-2
    r2 = r * r
    rs = jnp.where(small, 1.0, r)
    series = -1.0 / 3.0 + r2 / 30.0 - r2 * r2 / 840.0
    return jnp.where(small, series, (jnp.cos(rs) - _sinc(rs)) / (rs * rs))


def _layer_point(x, betas, centers, etas):
    """One layer at one point: returns (y, log |det J|).

    x (3,), betas (p,), centers (p, 3), etas (p,).  The 2x2 tangent Jacobian
    determinant is computed basis-free: with M = E (I - xx^T), where E is the
    ambient derivative of the transport map, |det J| equals the norm of
    sum_k x_k (col_{k+1} x col_{k+2}) over cyclic column indices of M.
    """
    t = centers @ x                                   # (p,)
    coef = etas * jnp.exp(betas * (t - 1.0))          # (p,)
    g_amb = coef @ centers                            # (3,)
    a = g_amb @ x
    v = g_amb - a * x                                 # tangent gradient
    r2 = v @ v
    r = jnp.sqrt(jnp.where(r2 < 1e-64, 1e-64, r2))
    r = jnp.where(r2 < 1e-64, 0.0, r)
    c = jnp.cos(r)
    s = _sinc(r)
    y = c * x + s * v

    # Ambient derivative of the tangent gradient v(x) = g(x) - <g, x> x.
    dg = jnp.einsum("i,ij,ik->jk", coef * betas, centers, centers)
    dv = dg - jnp.outer(x, x @ dg) - jnp.outer(x, g_amb) - a * jnp.eye(3)
    # Ambient derivative of y = cos(r) x + sinc(r) v via the chain rule;
    # dr/dx enters through q = Dv^T v.
    q = v @ dv                                        # (3,)
    w1 = _dcos(r) * v - s * x
    e_mat = c * jnp.eye(3) + s * dv + jnp.outer(w1, q)
    m = e_mat - jnp.outer(e_mat @ x, x)
    c0, c1, c2 = m[:, 0], m[:, 1], m[:, 2]
    adj = (x[0] * jnp.cross(c1, c2)
           + x[1] * jnp.cross(c2, c0)
           + x[2] * jnp.cross(c0, c1))
    det = jnp.linalg.norm(adj)
    return y, jnp.log(det)


def _component_point(x, sb, sc, se):
    """K-layer trajectory of one point: returns (y, sum of layer logdets)."""

    def step(carry, lp):
        y, tot = carry
        b, c, e = lp
        y2, ld = _layer_point(y, b, c, e)
        return (y2, tot + ld), None

    (y, tot), _ = lax.scan(step, (x, 0.0), (sb, sc, se))
    return y, tot


_layer_point_j = jax.jit(_layer_point)
_layer_batch_j = jax.jit(jax.vmap(_layer_point, in_axes=(0, None, None, None)))
_component_batch_j = jax.jit(
    jax.vmap(_component_point, in_axes=(0, None, None, None)))


def _eval_chunked(kernel, xs, params):
    """Run a batched kernel over xs (N, 3) in fixed-size padded chunks."""
    n = xs.shape[0]
    pad = (-n) % _CHUNK
    if n + pad > _CHUNK:
        xp = np.concatenate([xs, np.tile([[1.0, 0.0, 0.0]], (pad, 1))])
        ys = []
        lds = []
        for i in range(0, n + pad, _CHUNK):
            y, ld = kernel(jnp.asarray(xp[i:i + _CHUNK]), *params)
            ys.append(np.asarray(y))
            lds.append(np.asarray(ld))
        return np.concatenate(ys)[:n], np.concatenate(lds)[:n]
    xp = np.concatenate([xs, np.tile([[1.0, 0.0, 0.0]], (pad, 1))]) if pad else xs
    y, ld = kernel(jnp.asarray(xp), *params)
    return np.asarray(y)[:n], np.asarray(ld)[:n]


# ---------------------------------------------------------------------------
# public evaluations
# ---------------------------------------------------------------------------

def _check_unit(x):
    if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > 1e-9):
        raise ValueError("points must lie on the unit sphere")


def layer_jacobian_logdet(x, layer):
    """log |det J| of one layer at x, for x of shape (3,) or (N, 3).

    J is the 2x2 matrix of directional derivatives of layer_forward between
    orthonormal tangent bases at x and at layer_forward(x); |det J| is
    basis independent.  Raises DegenerateJacobianError if any determinant
    falls below DEGENERATE_DET (for p = 1 this happens exactly at the layer
    center, where the tangent Jacobian vanishes).
    """
    x = np.asarray(x, dtype=float)
    _check_unit(x)
    args = (jnp.asarray(layer.betas), jnp.asarray(layer.centers),
            jnp.asarray(layer.etas))
    if x.ndim == 1:
        ld = float(_layer_point_j(jnp.asarray(x), *args)[1])
    else:
        ld = np.asarray(_layer_batch_j(jnp.asarray(x), *args)[1])
    if np.any(np.asarray(ld) < _DEGENERATE_LOGDET) or not np.all(np.isfinite(ld)):
        raise DegenerateJacobianError(
            "layer Jacobian determinant below 1e-300; the map is no longer "
            "a diffeomorphism at this point")
    return ld


def component_pushforward(x, comp):
    """Final point and accumulated log |det J| of the full composition.

    Returns (y, total_logdet) with shapes matching x, so callers that need
    both the trajectory endpoint and the density never recompute the pass.
    """
    x = np.asarray(x, dtype=float)
    _check_unit(x)
    params = tuple(jnp.asarray(a) for a in comp.stacked())
    if x.ndim == 1:
        y, tot = _component_batch_j(jnp.asarray(x[None]), *params)
        return np.asarray(y)[0], float(tot[0])
    y, tot = _eval_chunked(_component_batch_j, x, params)
    return y, tot


def component_logdensity(x, comp):
    """log f(x) = -log(4 pi) + sum_k log |det J_k| for the composition.

    Accepts x of shape (3,) or (N, 3); returns a scalar or (N,).  Raises
    DegenerateJacobianError when the accumulated determinant is not finite.
    """
    _, tot = component_pushforward(x, comp)
    out = tot - LOG_4PI
    if not np.all(np.isfinite(out)):
        raise DegenerateJacobianError(
            "non-finite component log density; a layer Jacobian degenerated "
            "along the trajectory")
    return out
