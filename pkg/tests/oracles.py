"""Independent oracles used to check the analytic code paths.

Everything here is deliberately written against a different route than the
implementation: explicit 2x2 tangent matrices instead of basis-free cofactor
algebra, central finite differences instead of automatic differentiation,
1-d adaptive quadrature over the colatitude instead of a spherical lattice,
and the sinh form of the vMF constant instead of the expm1 form.
"""

import numpy as np
from scipy import integrate as scipy_integrate

from spheremix import geometry
from spheremix.flow import layer_forward
from spheremix.optim import FreeParams, objective


def fd_layer_jacobian(x, layer, h=1e-5):
    """2x2 tangent Jacobian of one layer by central differences.

    Columns are finite-difference images of geodesic steps along a tangent
    basis at x, expressed in a tangent basis at the image point.
    """
    y = layer_forward(x, layer)
    ex = geometry.tangent_basis(x)
    ey = geometry.tangent_basis(y)
    jac = np.zeros((2, 2))
    for j, e in enumerate(ex):
        y_plus = layer_forward(geometry.exp_map(x, h * e), layer)
        y_minus = layer_forward(geometry.exp_map(x, -h * e), layer)
        col = (y_plus - y_minus) / (2.0 * h)
        for i, f in enumerate(ey):
            jac[i, j] = f @ col
    return jac


def fd_layer_absdet(x, layer, h=1e-5):
    return abs(np.linalg.det(fd_layer_jacobian(x, layer, h)))


def fd_objective_gradient(free, batch, h=1e-6):
    """Central finite differences of the weighted objective with respect to
    every raw parameter, flattened in (betas, centers, etas) order."""
    arrays = (free.raw_betas, free.raw_centers, free.raw_etas)
    out = []
    for which, arr in enumerate(arrays):
        fd = np.zeros(arr.size)
        for j in range(arr.size):
            vals = []
            for sign in (1.0, -1.0):
                pert = [a.copy() for a in arrays]
                pert[which].ravel()[j] += sign * h
                vals.append(objective(FreeParams(*pert), batch))
            fd[j] = (vals[0] - vals[1]) / (2.0 * h)
        out.append(fd)
    return np.concatenate(out)


def flatten_free(free):
    return np.concatenate([free.raw_betas.ravel(), free.raw_centers.ravel(),
                           free.raw_etas.ravel()])


def zonal_integral(q):
    """Integral over S2 of a zonal function f(x) = q(x_3), by adaptive 1-d
    quadrature: 2 pi * int_{-1}^{1} q(z) dz."""
    val, _ = scipy_integrate.quad(q, -1.0, 1.0, limit=200)
    return 2.0 * np.pi * val


def vmf_density_sinh(x, mu, kappa):
    """vMF density via the textbook constant kappa / (4 pi sinh kappa);
    valid for moderate kappa (sinh overflows near 710)."""
    t = np.asarray(x, dtype=float) @ np.asarray(mu, dtype=float)
    if kappa == 0.0:
        return np.full_like(t, 1.0 / (4.0 * np.pi))
    return kappa / (4.0 * np.pi * np.sinh(kappa)) * np.exp(kappa * t)


def raster_mass(raster, lon_steps, lat_steps):
    """Riemann sum of a lon/lat density raster against cell solid angles
    cos(lat) dlat dlon."""
    lat = np.radians(raster[:, 1])
    dlon = 2.0 * np.pi / lon_steps
    dlat = np.pi / lat_steps
    return float(np.sum(raster[:, 2] * np.cos(lat) * dlon * dlat))
