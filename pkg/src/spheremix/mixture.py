"""Mixtures of exponential-map flows and their EM fitters.

The model is f(x) = sum_g tau_g f(x; Theta_g) with convex weights tau and one
K-layer flow per component.  Fitting alternates:

  soft EM   E-step responsibilities, weight update by column means, then one
            mini-batch SGD M-step per component on responsibility-weighted
            data.
  hard EM   as soft EM but responsibilities are hardened to the argmax
            assignment (ties to the lowest index); weights become the
            assignment fractions N_g / N, and each component's M-step sees
            only its assigned points with unit weights.

Components that receive no observations are frozen (their parameters are not
optimized) and, after convergence, removed by prune_empty.  Once a hard
weight update zeroes tau_g, the component's responsibilities are identically
zero, so an empty component cannot reacquire points later; pruning it does
not change the fitted density anywhere.

Symmetry breaking: components are seeded from distinct randomly chosen data
points (distance-squared weighted, then a few spherical k-means refinements)
and each component takes one initial M-step on its seed partition cell
before the EM loop starts.
"""

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry
from .flow import ComponentParams, LayerParams, component_logdensity
from .optim import WeightedBatch, decode, init_free, maximize, unit_batch

logger = logging.getLogger(__name__)

MODEL_FORMAT = "spheremix-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MixtureModel:
    """G flow components with convex weights tau (sum 1 within 1e-10)."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float)
        if len(comps) < 1 or w.shape != (len(comps),):
            raise ValueError("need G >= 1 components with matching weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")
        if len({(c.K, c.p) for c in comps}) != 1:
            raise ValueError("components must share K and p")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def G(self):
        return len(self.components)

    @property
    def K(self):
        return self.components[0].K

    @property
    def p(self):
        return self.components[0].p


@dataclass(frozen=True)
class EmConfig:
    """EM loop settings.

    tol: stop when |delta log-likelihood| / max(1, |previous|) < tol.
    max_iters: iteration cap (each iteration is E-step, weight update, and
        one M-step per component).
    prune: remove empty components after convergence (hard EM only).
    optimize_empty: if True, empty components still receive an M-step over a
        zero-weight batch (the objective and gradient are identically zero,
        so this is a no-op kept for completeness); default freezes them.
    init_beta: decoded bump concentration at initialization.
    init_lloyd: spherical k-means refinement sweeps for the seed partition.
    """

    tol: float = 1e-5
    max_iters: int = 100
    prune: bool = True
    optimize_empty: bool = False
    init_beta: float = 0.1
    init_lloyd: int = 3

    def __post_init__(self):
        if self.tol < 0 or self.max_iters < 1:
            raise ValueError("tol must be >= 0 and max_iters >= 1")
        if self.init_beta <= 0 or self.init_lloyd < 0:
            raise ValueError("init_beta must be > 0 and init_lloyd >= 0")


@dataclass(frozen=True)
class FitReport:
    """Per-fit summary; trace length equals the number of EM iterations."""

    log_likelihood_trace: np.ndarray
    nonempty_components: int
    iterations: int
    converged: bool

    def __post_init__(self):
        tr = np.asarray(self.log_likelihood_trace, dtype=float)
        if tr.shape != (self.iterations,):
            raise ValueError("trace length must equal iterations")
        object.__setattr__(self, "log_likelihood_trace", tr)


def _as_points(data):
    pts = getattr(data, "points", data)
    return np.asarray(pts, dtype=float)


def derive_seed(root, *path):
    """Deterministic child seed for a fit stage; documented splitting rule:
    SeedSequence([root, *path]) -> first uint32 word."""
    ss = np.random.SeedSequence([int(root)] + [int(q) for q in path])
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# densities, responsibilities, weights
# ---------------------------------------------------------------------------

def _logdensity_matrix(points, components):
    """N x G matrix of component log densities."""
    cols = [component_logdensity(points, c) for c in components]
    return np.stack(cols, axis=1)


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.where(weights > 0, np.log(np.maximum(weights, 1e-320)),
                        -np.inf)


def _observed_loglik(weights, ldm):
    a = _log_weights(weights) + ldm
    m = a.max(axis=1, keepdims=True)
    return float(np.sum(m[:, 0] + np.log(np.sum(np.exp(a - m), axis=1))))


def _responsibilities(weights, ldm):
    a = _log_weights(weights) + ldm
    m = a.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError(
            "a point has zero density under every component")
    r = np.exp(a - m)
    return r / r.sum(axis=1, keepdims=True)


def mixture_logdensity(x, model):
    """log sum_g tau_g f(x; Theta_g), max-shifted for stability.

    Accepts x of shape (3,) or (N, 3).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None] if single else x
    ldm = _logdensity_matrix(pts, model.components)
    a = _log_weights(model.weights) + ldm
    m = a.max(axis=1)
    out = m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))
    return float(out[0]) if single else out


def e_step(data, model):
    """Responsibility matrix: pi_{j,g} proportional to tau_g f(x_j; Theta_g),
    rows normalized to sum 1."""
    return _responsibilities(model.weights,
                             _logdensity_matrix(_as_points(data),
                                                model.components))


def harden(resp):
    """0/1 assignment matrix from a responsibility matrix.

    Row-wise argmax; ties break to the lowest component index.
    """
    resp = np.asarray(resp, dtype=float)
    out = np.zeros(resp.shape, dtype=int)
    out[np.arange(resp.shape[0]), np.argmax(resp, axis=1)] = 1
    return out


def update_weights_soft(resp):
    """tau_g = (sum_j pi_{j,g}) / N (column means)."""
    return np.asarray(resp, dtype=float).mean(axis=0)


def update_weights_hard(assign):
    """tau_g = N_g / N (assignment fractions)."""
    assign = np.asarray(assign)
    return assign.sum(axis=0) / assign.shape[0]


def prune_empty(model, assign):
    """Remove components with no assigned observations; renormalize tau.

    The surviving weights are renormalized to sum 1 (a no-op when every
    removed component already had tau_g = 0, as after a hard weight update).
    """
    counts = np.asarray(assign).sum(axis=0)
    keep = np.flatnonzero(counts > 0)
    if keep.size == 0:
        raise ValueError("all components are empty")
    if keep.size == len(model.components):
        w = model.weights / model.weights.sum()
        return MixtureModel(model.components, w)
    comps = tuple(model.components[g] for g in keep)
    w = model.weights[keep]
    return MixtureModel(comps, w / w.sum())


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _partition_init(rng, points, G, lloyd):
    """Seed labels for G components from distinct randomly chosen data points.

    Seeds are drawn with squared-geodesic-distance weighting (distinct with
    probability one), then refined by a few spherical k-means sweeps.
    Returns integer labels of shape (N,).
    """
    n = points.shape[0]
    seeds = [points[rng.integers(n)]]
    for _ in range(G - 1):
        cos = np.clip(points @ np.stack(seeds).T, -1.0, 1.0)
        d2 = np.min(np.arccos(cos) ** 2, axis=1)
        total = d2.sum()
        if total > 0:
            seeds.append(points[rng.choice(n, p=d2 / total)])
        else:
            seeds.append(points[rng.integers(n)])
    centers = np.stack(seeds)
    labels = np.argmax(points @ centers.T, axis=1)
    for _ in range(lloyd):
        for g in range(G):
            mask = labels == g
            if mask.any():
                centers[g] = geometry.normalize(points[mask].mean(axis=0))
        labels = np.argmax(points @ centers.T, axis=1)
    return labels


def _init_components(points, G, cfg, em_cfg, K, p):
    """Partition-seeded free parameters plus one M-step per seed cell."""
    rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), 1]))
    labels = _partition_init(rng, points, G, em_cfg.init_lloyd)
    frees = []
    for g in range(G):
        rng_g = np.random.default_rng(
            np.random.SeedSequence([int(cfg.seed), 2, g]))
        free = init_free(rng_g, K, p, em_cfg.init_beta)
        cell = points[labels == g]
        if cell.shape[0] > 0:
            free = maximize(free, unit_batch(cell),
                            dataclasses.replace(cfg, seed=derive_seed(cfg.seed, 3, g)))
        frees.append(free)
    return frees


# ---------------------------------------------------------------------------
# fitters
# ---------------------------------------------------------------------------

def _check_fit_args(points, G):
    n = points.shape[0]
    if G < 1 or n < G:
        raise ValueError(f"need N >= G >= 1, got N={n}, G={G}")


def _converged(trace, tol):
    if len(trace) < 2:
        return False
    return abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-2]))


def fit_soft(data, G, cfg, em_cfg=EmConfig(), K=20, p=1):
    """Soft EM: returns (MixtureModel, ResponsibilityMatrix, FitReport).

    Each iteration runs an E-step, the closed-form weight update, and one
    responsibility-weighted M-step per component (warm started); stops when
    the observed-data log-likelihood stabilizes within em_cfg.tol or after
    em_cfg.max_iters iterations.
    """
    points = _as_points(data)
    _check_fit_args(points, G)
    frees = _init_components(points, G, cfg, em_cfg, K, p)
    tau = np.full(G, 1.0 / G)
    ldm = _logdensity_matrix(points, [decode(f) for f in frees])
    trace = []
    converged = False
    for it in range(em_cfg.max_iters):
        resp = _responsibilities(tau, ldm)
        tau = update_weights_soft(resp)
        for g in range(G):
            batch = WeightedBatch(points, resp[:, g])
            frees[g] = maximize(
                frees[g], batch,
                dataclasses.replace(cfg, seed=derive_seed(cfg.seed, 4, it, g)))
        ldm = _logdensity_matrix(points, [decode(f) for f in frees])
        trace.append(_observed_loglik(tau, ldm))
        logger.info("soft EM iter %d: loglik %.4f", it, trace[-1])
        if _converged(trace, em_cfg.tol):
            converged = True
            break
    model = MixtureModel(tuple(decode(f) for f in frees), tau)
    resp = _responsibilities(tau, ldm)
    report = FitReport(np.asarray(trace), G, len(trace), converged)
    return model, resp, report


def fit_hard(data, G, cfg, em_cfg=EmConfig(), K=20, p=1):
    """Hard EM: returns (MixtureModel, AssignmentMatrix, FitReport).

    As fit_soft, but responsibilities are hardened after every E-step, the
    weight update uses assignment fractions, and each component's M-step sees
    only its assigned points with unit weights.  Empty components are frozen
    during iterations; after convergence the assignment/weight pair is
    settled to an exact mutual fixed point, so one further E-step plus
    harden reproduces the returned assignments, and (when em_cfg.prune)
    empty components are removed without changing the fitted density.
    """
    points = _as_points(data)
    _check_fit_args(points, G)
    n = points.shape[0]
    frees = _init_components(points, G, cfg, em_cfg, K, p)
    tau = np.full(G, 1.0 / G)
    ldm = _logdensity_matrix(points, [decode(f) for f in frees])
    trace = []
    converged = False
    for it in range(em_cfg.max_iters):
        assign = harden(_responsibilities(tau, ldm))
        tau = update_weights_hard(assign)
        for g in range(G):
            mask = assign[:, g] == 1
            if mask.any():
                batch = unit_batch(points[mask])
            elif em_cfg.optimize_empty:
                # zero-weight stand-in batch; objective and gradient vanish
                batch = WeightedBatch(points, np.zeros(n))
            else:
                continue
            frees[g] = maximize(
                frees[g], batch,
                dataclasses.replace(cfg, seed=derive_seed(cfg.seed, 4, it, g)))
        ldm = _logdensity_matrix(points, [decode(f) for f in frees])
        trace.append(_observed_loglik(tau, ldm))
        logger.info("hard EM iter %d: loglik %.4f, nonempty %d",
                    it, trace[-1], int((assign.sum(axis=0) > 0).sum()))
        if _converged(trace, em_cfg.tol):
            converged = True
            break
    # Settle (assignments, weights) to a mutual fixed point with parameters
    # held fixed; this alternation ascends the complete-data likelihood over
    # a finite assignment space, so it terminates.
    for _ in range(64):
        assign = harden(_responsibilities(tau, ldm))
        tau_next = update_weights_hard(assign)
        if np.array_equal(tau_next, tau):
            break
        tau = tau_next
    assign = harden(_responsibilities(tau, ldm))
    model = MixtureModel(tuple(decode(f) for f in frees), tau)
    nonempty = int((assign.sum(axis=0) > 0).sum())
    report = FitReport(np.asarray(trace), nonempty, len(trace), converged)
    if em_cfg.prune:
        counts = assign.sum(axis=0)
        keep = np.flatnonzero(counts > 0)
        model = prune_empty(model, assign)
        assign = assign[:, keep]
    return model, assign, report


# ---------------------------------------------------------------------------
# committee baseline
# ---------------------------------------------------------------------------

class CommitteeDensity:
    """Average of independently fitted single-flow densities.

    The ensemble density is the arithmetic mean of member densities (mean in
    density space), so it integrates to 1 whenever the members do.  Calling
    the object evaluates the density; members are exposed for inspection.
    """

    def __init__(self, members):
        if not members:
            raise ValueError("committee needs at least one member")
        self.members = tuple(members)

    def logdensity(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None] if single else x
        ldm = _logdensity_matrix(pts, self.members)
        m = ldm.max(axis=1)
        out = m + np.log(np.mean(np.exp(ldm - m[:, None]), axis=1))
        return float(out[0]) if single else out

    def density(self, x):
        return np.exp(self.logdensity(x))

    def __call__(self, x):
        return self.density(x)


def fit_committee(data, members, cfg, K=20, p=1, init_beta=0.1):
    """Fit `members` single flows from distinct random initializations and
    average their densities.  Members whose optimization aborts are skipped
    with a warning; at least one member must succeed."""
    points = _as_points(data)
    if members < 1:
        raise ValueError("members must be >= 1")
    batch = unit_batch(points)
    fitted = []
    for mem in range(members):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(cfg.seed), 5, mem]))
        free = init_free(rng, K, p, init_beta)
        try:
            free = maximize(free, batch,
                            dataclasses.replace(cfg, seed=derive_seed(cfg.seed, 6, mem)))
        except RuntimeError as exc:
            warnings.warn(f"committee member {mem} failed and was skipped: {exc}")
            continue
        fitted.append(decode(free))
    if not fitted:
        raise RuntimeError("every committee member failed")
    return CommitteeDensity(fitted)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_dict(model, seed=None, metadata=None):
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "G": model.G,
        "K": model.K,
        "p": model.p,
        "weights": model.weights.tolist(),
        "components": [
            {"layers": [
                {"betas": l.betas.tolist(),
                 "centers": l.centers.tolist(),
                 "etas": l.etas.tolist()}
                for l in comp.layers]}
            for comp in model.components],
        "seed": seed,
        "metadata": metadata or {},
    }


def model_from_dict(doc):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(
            f"unsupported model file version {doc.get('version')!r}, "
            f"expected {MODEL_VERSION}")
    comps = tuple(
        ComponentParams(tuple(
            LayerParams(np.asarray(l["betas"]), np.asarray(l["centers"]),
                        np.asarray(l["etas"]))
            for l in c["layers"]))
        for c in doc["components"])
    return MixtureModel(comps, np.asarray(doc["weights"]))


def save_model(model, path, seed=None, metadata=None):
    """Write a versioned JSON model file; floats round-trip bit-exactly."""
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, seed, metadata), fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Load a model file written by save_model; returns (model, document)."""
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc), doc
