"""Reparameterized objectives, gradients, and the mini-batch SGD maximizer.

Constrained layer parameters are optimized through a smooth unconstrained
encoding ("free" parameters):

    beta   = cap * tanh(softplus(raw_beta) / cap)   (positive, capped)
    center = raw_center / |raw_center|              (unit norm)
    eta    = softmax(raw_etas within a layer)       (positive, sums to 1)

The per-component M-step objective is the responsibility-weighted sum
sum_j w_j log f(x_j; decode(free)), maximized by mini-batch gradient ascent
with momentum.  Gradients come from reverse-mode differentiation of the same
jitted kernels that evaluate the density, and are validated against central
finite differences in the test suite.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import jax
import jax.numpy as jnp

from . import geometry
from .flow import ComponentParams, _component_point, component_logdensity, LOG_4PI

logger = logging.getLogger(__name__)

# Upper bound on decoded beta; keeps every iterate inside the wrapping
# region with headroom (the transport stays a diffeomorphism).
BETA_CAP = 50.0


@dataclass(frozen=True)
class FreeParams:
    """Unconstrained parameters: raw_betas (K, p), raw_centers (K, p, 3),
    raw_etas (K, p)."""

    raw_betas: np.ndarray
    raw_centers: np.ndarray
    raw_etas: np.ndarray

    def __post_init__(self):
        rb = np.asarray(self.raw_betas, dtype=float)
        rc = np.asarray(self.raw_centers, dtype=float)
        re = np.asarray(self.raw_etas, dtype=float)
        if rb.ndim != 2 or re.shape != rb.shape or rc.shape != rb.shape + (3,):
            raise ValueError("raw parameter shapes disagree")
        object.__setattr__(self, "raw_betas", rb)
        object.__setattr__(self, "raw_centers", rc)
        object.__setattr__(self, "raw_etas", re)

    @property
    def K(self):
        return self.raw_betas.shape[0]

    @property
    def p(self):
        return self.raw_betas.shape[1]


@dataclass(frozen=True)
class SgdConfig:
    """Mini-batch SGD settings for one M-step.

    backtracking applies only when batch_size covers the whole batch: a step
    that would decrease the objective is retried with a halved learning rate
    (momentum reset), which makes full-batch M-steps non-decreasing.
    """

    learning_rate: float = 1e-2
    batch_size: int = 256
    epochs_per_mstep: int = 30
    seed: int = 0
    momentum: float = 0.9
    backtracking: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.epochs_per_mstep < 0:
            raise ValueError("epochs_per_mstep must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class WeightedBatch:
    """Observation points (N, 3) with nonnegative weights (N,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or w.shape != (pts.shape[0],):
            raise ValueError("points must be (N, 3) with matching weights (N,)")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.points.shape[0]


def unit_batch(points):
    """WeightedBatch with all weights 1."""
    points = np.asarray(points, dtype=float)
    return WeightedBatch(points, np.ones(points.shape[0]))


# ---------------------------------------------------------------------------
# decode / encode
# ---------------------------------------------------------------------------

def raw_to_beta(raw, beta_cap=BETA_CAP):
    """Positive beta from an unconstrained real: softplus, then a smooth cap.

    raw_to_beta(0) = log(2) before cap scaling; the cap factor
    cap * tanh(q / cap) only matters as q approaches the cap.
    """
    q = np.logaddexp(raw, 0.0)
    if math.isinf(beta_cap):
        return q
    return beta_cap * np.tanh(q / beta_cap)


def beta_to_raw(beta, beta_cap=BETA_CAP):
    """Right inverse of raw_to_beta, defined for 0 < beta < beta_cap."""
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0) or (not math.isinf(beta_cap) and np.any(beta >= beta_cap)):
        raise ValueError("beta must lie strictly inside (0, beta_cap)")
    q = beta if math.isinf(beta_cap) else beta_cap * np.arctanh(beta / beta_cap)
    # inverse softplus, stable for large q
    return q + np.log(-np.expm1(-q))


def decode(free, beta_cap=BETA_CAP):
    """Valid ComponentParams from free parameters (smooth, surjective onto
    the capped region)."""
    betas = raw_to_beta(free.raw_betas, beta_cap)
    centers = geometry.normalize(free.raw_centers)
    shifted = free.raw_etas - free.raw_etas.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    etas = ex / ex.sum(axis=-1, keepdims=True)
    return ComponentParams.from_stacked(betas, centers, etas)


def encode(comp, beta_cap=BETA_CAP):
    """A right inverse of decode: decode(encode(comp)) == comp within 1e-10.

    Uses raw_etas = log(etas), whose softmax reproduces etas exactly because
    they already sum to 1.
    """
    betas, centers, etas = comp.stacked()
    return FreeParams(beta_to_raw(betas, beta_cap), centers.copy(),
                      np.log(etas))


def init_free(rng, K, p, init_beta=0.1):
    """Random starting point: decoded betas equal init_beta on every bump,
    centers uniform on the sphere, raw_etas zero (equal convex weights)."""
    rb = np.full((K, p), beta_to_raw(init_beta))
    rc = geometry.random_unit(rng, K * p).reshape(K, p, 3)
    return FreeParams(rb, rc, np.zeros((K, p)))


# ---------------------------------------------------------------------------
# jitted objective / gradient kernels
# ---------------------------------------------------------------------------

def _decode_jax(rb, rc, re, beta_cap):
    q = jnp.logaddexp(rb, 0.0)
    betas = q if math.isinf(beta_cap) else beta_cap * jnp.tanh(q / beta_cap)
    centers = rc / jnp.linalg.norm(rc, axis=-1, keepdims=True)
    etas = jax.nn.softmax(re, axis=-1)
    return betas, centers, etas


def _weighted_obj(rb, rc, re, pts, w, beta_cap):
    betas, centers, etas = _decode_jax(rb, rc, re, beta_cap)
    _, tot = jax.vmap(_component_point, in_axes=(0, None, None, None))(
        pts, betas, centers, etas)
    return jnp.sum(w * (tot - LOG_4PI))


_value_and_grad = jax.jit(
    jax.value_and_grad(_weighted_obj, argnums=(0, 1, 2)),
    static_argnums=5)
_value_only = jax.jit(_weighted_obj, static_argnums=5)


def objective(free, batch, beta_cap=BETA_CAP):
    """Weighted log-likelihood sum_j w_j log f(x_j; decode(free))."""
    ld = component_logdensity(batch.points, decode(free, beta_cap))
    return float(np.dot(batch.weights, ld))


def gradient(free, batch, beta_cap=BETA_CAP):
    """Exact gradient of objective with respect to every raw parameter,
    returned as a FreeParams-shaped triple."""
    _, grads = _value_and_grad(
        jnp.asarray(free.raw_betas), jnp.asarray(free.raw_centers),
        jnp.asarray(free.raw_etas), jnp.asarray(batch.points),
        jnp.asarray(batch.weights), beta_cap)
    return FreeParams(*(np.asarray(g) for g in grads))


def maximize(free0, data, cfg, beta_cap=BETA_CAP):
    """Mini-batch gradient ascent on the weighted objective.

    Runs cfg.epochs_per_mstep epochs over shuffled mini-batches (the last
    batch of an epoch is padded with zero-weight points so kernel shapes stay
    fixed; zero weight makes the padding exact).  Deterministic given
    cfg.seed.  Aborts with a diagnostic if the objective turns non-finite.

    With cfg.backtracking and batch_size >= N, each full-batch step is
    accepted only if it does not decrease the objective, halving the step
    (and dropping momentum) until it does not; the objective is then
    non-decreasing across the call.
    """
    if cfg.epochs_per_mstep == 0:
        return free0
    pts_all = data.points
    w_all = data.weights
    n = data.n
    cap = float(beta_cap)
    rb = jnp.asarray(free0.raw_betas)
    rc = jnp.asarray(free0.raw_centers)
    re = jnp.asarray(free0.raw_etas)
    before = objective(free0, data, beta_cap)
    if not np.isfinite(before):
        raise RuntimeError(f"objective non-finite at start of maximize: {before}")

    if cfg.backtracking and cfg.batch_size >= n:
        jp = jnp.asarray(pts_all)
        jw = jnp.asarray(w_all)
        val = float(_value_only(rb, rc, re, jp, jw, cap))
        lr = cfg.learning_rate
        vel = (jnp.zeros_like(rb), jnp.zeros_like(rc), jnp.zeros_like(re))
        for _ in range(cfg.epochs_per_mstep):
            _, grads = _value_and_grad(rb, rc, re, jp, jw, cap)
            vel = tuple(cfg.momentum * v + g for v, g in zip(vel, grads))
            for halving in range(60):
                nb, nc, ne = (a + lr * v for a, v in zip((rb, rc, re), vel))
                new = float(_value_only(nb, nc, ne, jp, jw, cap))
                if new >= val:
                    break
                lr *= 0.5
                vel = grads  # drop accumulated momentum when shrinking
            else:
                continue  # no acceptable step at float resolution; keep iterate
            rb, rc, re, val = nb, nc, ne, new
            if not np.isfinite(val):
                raise RuntimeError("objective became non-finite during maximize")
    else:
        # Batches keep the configured size even when the data is smaller;
        # index positions past n are cycled repeats whose weights are masked
        # to zero, so kernel shapes stay fixed and the padding is exact.
        b = cfg.batch_size
        rng = np.random.default_rng(cfg.seed)
        vel = (jnp.zeros_like(rb), jnp.zeros_like(rc), jnp.zeros_like(re))
        pad = (-n) % b
        for _ in range(cfg.epochs_per_mstep):
            perm = rng.permutation(n)
            if pad:
                perm = np.resize(perm, n + pad)
            wmask = np.ones(n + pad)
            wmask[n:] = 0.0
            for i in range(0, n + pad, b):
                idx = perm[i:i + b]
                w = w_all[idx] * wmask[i:i + b]
                value, grads = _value_and_grad(
                    rb, rc, re, jnp.asarray(pts_all[idx]), jnp.asarray(w), cap)
                if not np.isfinite(float(value)):
                    raise RuntimeError(
                        "objective became non-finite during maximize")
                vel = tuple(cfg.momentum * v + g for v, g in zip(vel, grads))
                rb, rc, re = (a + cfg.learning_rate * v
                              for a, v in zip((rb, rc, re), vel))

    out = FreeParams(np.asarray(rb), np.asarray(rc), np.asarray(re))
    if not all(np.all(np.isfinite(a))
               for a in (out.raw_betas, out.raw_centers, out.raw_etas)):
        raise RuntimeError("parameters became non-finite during maximize")
    try:
        after = objective(out, data, beta_cap)
    except ValueError as exc:
        # e.g. a decoded beta underflowed to zero; report as a diverged run
        raise RuntimeError(
            f"parameters left the valid region during maximize: {exc}") from exc
    if not np.isfinite(after):
        raise RuntimeError(f"objective non-finite at end of maximize: {after}")
    logger.debug("maximize: objective %.6f -> %.6f over %d epochs",
                 before, after, cfg.epochs_per_mstep)
    return out
