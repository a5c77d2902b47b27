"""Geometric primitives on the unit sphere S2.

Points are plain numpy arrays of shape (3,) or batches (..., 3) with unit
norm.  Tangent vectors at a base point x are 3-vectors orthogonal to x whose
euclidean norm equals geodesic arc length in radians.
"""

import numpy as np

# Below this norm the exp-map trig factors are replaced by their two-term
# Taylor expansions so the removable singularity stays smooth under
# finite differencing.
_SMALL_NORM = 1e-12


def normalize(w):
    """Rescale w (..., 3) to unit norm."""
    w = np.asarray(w, dtype=float)
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    return w / n


def geodesic_distance(a, b):
    """Great-circle distance in [0, pi] between unit vectors a and b.

    Satisfies cos(geodesic_distance(a, b)) = <a, b>.  The inner product is
    clamped to [-1, 1] so rounding near coincident or antipodal pairs cannot
    produce a domain error.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.arccos(t)


def exp_map(base, v):
    """Exponential map on S2: follow the geodesic from base with velocity v.

    Closed form cos(|v|) * base + sin(|v|) * v/|v|.  v must be tangent at
    base.  For |v| below 1e-12 the sin(r)/r and cos(r) factors use two-term
    Taylor expansions, so exp_map(base, 0) == base exactly.
    """
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    small = r < _SMALL_NORM
    # Guard the division; the branch value is discarded where small is set.
    r_safe = np.where(small, 1.0, r)
    c = np.where(small, 1.0 - 0.5 * r * r, np.cos(r))
    s = np.where(small, 1.0 - r * r / 6.0, np.sin(r_safe) / r_safe)
    return c * base + s * v


def tangent_basis(base):
    """Deterministic orthonormal basis (e1, e2) of the tangent plane at base.

    Starts from the canonical axis least aligned with base (stable away from
    a measure-zero seam where the argmin changes), Gram-Schmidts it, and
    completes with e2 = base x e1 so that (e1, e2, base) is right handed:
    det[e1 e2 base] = +1.
    """
    base = np.asarray(base, dtype=float)
    axis = np.argmin(np.abs(base))
    e1 = np.zeros(3)
    e1[axis] = 1.0
    e1 = e1 - np.dot(e1, base) * base
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(base, e1)
    return e1, e2


def project_to_tangent(base, w):
    """Tangential component of w at base: (I - base base^T) w.

    Idempotent, and maps w = base to the zero vector.
    """
    base = np.asarray(base, dtype=float)
    w = np.asarray(w, dtype=float)
    return w - np.sum(w * base, axis=-1, keepdims=True) * base


def random_unit(rng, n=None):
    """Uniform random unit vectors, shape (3,) if n is None else (n, 3)."""
    shape = (3,) if n is None else (n, 3)
    w = rng.standard_normal(shape)
    return normalize(w)
