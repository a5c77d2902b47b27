"""von Mises-Fisher densities, exact sampling on S2, and the synthetic
cluster-data generator used by the simulation study.

The S2 density with mean direction mu and concentration kappa is

    f(x) = kappa / (4 pi sinh kappa) * exp(kappa <x, mu>)
         = kappa * exp(kappa (<x, mu> - 1)) / (2 pi (1 - exp(-2 kappa)))

where the second form avoids overflow for large kappa; kappa -> 0 recovers
the uniform density 1/(4 pi).  Sampling is rejection free: the cosine of the
colatitude around mu has an exponential-family law whose inverse CDF is
closed form, and the azimuth is uniform.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import geometry

TRUTH_FORMAT = "spheremix-vmf-truth"
TRUTH_VERSION = 1

_UNIFORM = 1.0 / (4.0 * np.pi)


@dataclass(frozen=True)
class VmfParams:
    """Mean direction (unit 3-vector) and concentration kappa >= 0."""

    mean_direction: np.ndarray
    concentration: float

    def __post_init__(self):
        mu = geometry.normalize(np.asarray(self.mean_direction, dtype=float))
        if mu.shape != (3,):
            raise ValueError("mean_direction must be a 3-vector")
        if self.concentration < 0:
            raise ValueError("concentration must be nonnegative")
        object.__setattr__(self, "mean_direction", mu)
        object.__setattr__(self, "concentration", float(self.concentration))


@dataclass(frozen=True)
class VmfMixture:
    """J vMF components with convex weights."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float)
        if len(comps) < 1 or w.shape != (len(comps),):
            raise ValueError("need J >= 1 components with matching weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def J(self):
        return len(self.components)


@dataclass(frozen=True)
class SimSetting:
    """One simulation scenario: J cluster count, lam the rate of the
    exponential law generating concentrations (mean kappa = 1/lam), N sample
    count, and the generator seed."""

    J: int
    lam: float
    N: int
    seed: int

    def __post_init__(self):
        if self.J < 1 or self.lam <= 0 or self.N < 1:
            raise ValueError("need J >= 1, lam > 0, N >= 1")


def vmf_logdensity(x, params):
    """Log vMF density, stable for any kappa >= 0; x is (3,) or (N, 3)."""
    x = np.asarray(x, dtype=float)
    kappa = params.concentration
    t = x @ params.mean_direction
    if kappa < 1e-8:
        # kappa/(1 - e^{-2 kappa}) = (1/2)(1 + kappa + O(kappa^2)), so the
        # log normalizer reduces to log(1/4pi) + log1p(kappa) at this scale.
        return kappa * (t - 1.0) + np.log(_UNIFORM) + np.log1p(kappa)
    return kappa * (t - 1.0) - np.log(2.0 * np.pi * -np.expm1(-2.0 * kappa) / kappa)


def vmf_density(x, params):
    """vMF density on S2; returns 1/(4 pi) in the kappa -> 0 limit."""
    return np.exp(vmf_logdensity(x, params))


def vmf_sample(params, n, seed=None, rng=None):
    """n i.i.d. draws, shape (n, 3); deterministic given seed.

    Inverse-CDF sampling of w = cos(colatitude about mu):
    w = 1 + log(u + (1-u) e^{-2 kappa}) / kappa for uniform u, exact on S2.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    kappa = params.concentration
    u = rng.random(n)
    if kappa < 1e-8:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    phi = rng.random(n) * 2.0 * np.pi
    s = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    e1, e2 = geometry.tangent_basis(params.mean_direction)
    return (w[:, None] * params.mean_direction
            + (s * np.cos(phi))[:, None] * e1
            + (s * np.sin(phi))[:, None] * e2)


def mixture_density(x, mix):
    """Density of a vMF mixture at x of shape (3,) or (N, 3)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None] if single else x
    dens = np.zeros(pts.shape[0])
    for w, comp in zip(mix.weights, mix.components):
        dens += w * vmf_density(pts, comp)
    return float(dens[0]) if single else dens


def sample_mixture(mix, n, rng):
    """n draws from a vMF mixture (component labels are discarded)."""
    labels = rng.choice(mix.J, size=n, p=mix.weights)
    out = np.empty((n, 3))
    for j in range(mix.J):
        mask = labels == j
        if mask.any():
            out[mask] = vmf_sample(mix.components[j], int(mask.sum()), rng=rng)
    return out


def generate_setting(s):
    """Draw a ground-truth vMF mixture and a dataset from it.

    Mean directions are uniform on the sphere, concentrations are
    exponential with rate s.lam (mean 1/lam), and mixture weights are
    uniform 1/J.  Returns (points (N, 3), VmfMixture); the sample carries no
    component labels.  Deterministic given s.seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(s.seed), 11]))
    mus = geometry.random_unit(rng, s.J)
    kappas = rng.exponential(scale=1.0 / s.lam, size=s.J)
    mix = VmfMixture(
        tuple(VmfParams(mu, k) for mu, k in zip(mus, kappas)),
        np.full(s.J, 1.0 / s.J))
    points = sample_mixture(mix, s.N, rng)
    return points, mix


# ---------------------------------------------------------------------------
# ground-truth serialization
# ---------------------------------------------------------------------------

def truth_to_dict(mix, setting=None):
    doc = {
        "format": TRUTH_FORMAT,
        "version": TRUTH_VERSION,
        "weights": mix.weights.tolist(),
        "components": [
            {"mu": c.mean_direction.tolist(), "kappa": c.concentration}
            for c in mix.components],
    }
    if setting is not None:
        doc["setting"] = {"J": setting.J, "lam": setting.lam,
                          "N": setting.N, "seed": setting.seed}
    return doc


def truth_from_dict(doc):
    if doc.get("format") != TRUTH_FORMAT:
        raise ValueError(f"not a truth file (format={doc.get('format')!r})")
    if doc.get("version") != TRUTH_VERSION:
        raise ValueError(
            f"unsupported truth file version {doc.get('version')!r}, "
            f"expected {TRUTH_VERSION}")
    comps = tuple(VmfParams(np.asarray(c["mu"]), float(c["kappa"]))
                  for c in doc["components"])
    return VmfMixture(comps, np.asarray(doc["weights"]))


def save_truth(mix, path, setting=None):
    with open(path, "w") as fh:
        json.dump(truth_to_dict(mix, setting), fh, indent=1)
        fh.write("\n")


def load_truth(path):
    with open(path) as fh:
        doc = json.load(fh)
    return truth_from_dict(doc), doc
