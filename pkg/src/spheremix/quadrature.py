"""Spherical quadrature grids and density evaluation metrics.

The default grid is a Fibonacci lattice: M near-equal-area nodes spiraling
from pole to pole at the golden angle, each carrying the uniform weight
4 pi / M steradians.  Density fields are vectorized callables mapping an
(M, 3) array of unit vectors to an (M,) array of densities.
"""

import csv
from dataclasses import dataclass

import numpy as np

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class QuadratureGrid:
    """Node set (M, 3) with positive weights (M,) summing to 4 pi."""

    nodes: np.ndarray
    node_weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.node_weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or w.shape != (nodes.shape[0],):
            raise ValueError("nodes must be (M, 3) with matching weights")
        if np.any(w <= 0) or abs(w.sum() - 4.0 * np.pi) > 1e-6:
            raise ValueError("weights must be positive and sum to 4 pi")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "node_weights", w)

    @property
    def M(self):
        return self.nodes.shape[0]


@dataclass(frozen=True)
class DensityField:
    """A labeled density: evaluator maps (M, 3) points to (M,) values."""

    evaluator: object
    label: str = ""

    def __call__(self, points):
        return self.evaluator(points)


def _evaluate(f, points):
    fn = f.evaluator if isinstance(f, DensityField) else f
    return np.asarray(fn(points), dtype=float)


def build_grid(resolution):
    """Fibonacci lattice with M = resolution nodes and uniform weights.

    Node i sits at height z = 1 - 2(i + 1/2)/M with azimuth i times the
    golden angle; deterministic and near equal area.
    """
    m = int(resolution)
    if m < 1:
        raise ValueError("resolution must be >= 1")
    i = np.arange(m)
    z = 1.0 - 2.0 * (i + 0.5) / m
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    az = _GOLDEN_ANGLE * i
    nodes = np.column_stack([s * np.cos(az), s * np.sin(az), z])
    return QuadratureGrid(nodes, np.full(m, 4.0 * np.pi / m))


def integrate(f, grid):
    """Quadrature integral sum_m w_m f(node_m)."""
    return float(np.dot(grid.node_weights, _evaluate(f, grid.nodes)))


def l1_distance(f, g, grid):
    """Integral of |f - g| over the sphere; at most 2 for two probability
    densities."""
    fv = _evaluate(f, grid.nodes)
    gv = _evaluate(g, grid.nodes)
    return float(np.dot(grid.node_weights, np.abs(fv - gv)))


def export_density_grid(f, lon_steps, lat_steps):
    """Regular lon/lat raster of a density field.

    Returns an (lon_steps * lat_steps, 4) array with columns
    (lon_degrees, lat_degrees, density, density_relative_to_uniform), where
    relative density is density times 4 pi.  Longitudes are cell left edges
    covering [-180, 180); latitudes are cell centers inside [-90, 90], so a
    cosine-weighted Riemann sum of the raster approximates the total mass.
    Rows vary longitude fastest.
    """
    if lon_steps < 2 or lat_steps < 2:
        raise ValueError("lon_steps and lat_steps must be >= 2")
    lon = -180.0 + 360.0 * np.arange(lon_steps) / lon_steps
    lat = -90.0 + 180.0 * (np.arange(lat_steps) + 0.5) / lat_steps
    lon_g, lat_g = np.meshgrid(lon, lat)
    lon_r = np.radians(lon_g.ravel())
    lat_r = np.radians(lat_g.ravel())
    pts = np.column_stack([np.cos(lat_r) * np.cos(lon_r),
                           np.cos(lat_r) * np.sin(lon_r),
                           np.sin(lat_r)])
    dens = _evaluate(f, pts)
    return np.column_stack([lon_g.ravel(), lat_g.ravel(), dens,
                            dens * 4.0 * np.pi])


def write_raster(raster, path):
    """Write an exported raster as CSV with header
    lon,lat,density,relative_density (degrees, inverse steradians)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lon", "lat", "density", "relative_density"])
        for row in raster:
            writer.writerow([f"{v:.17g}" for v in row])
