import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_component, random_layer
from oracles import fd_layer_absdet, zonal_integral

from spheremix import geometry
from spheremix.flow import (LOG_4PI, ComponentParams, DegenerateJacobianError,
                            LayerParams, component_logdensity,
                            component_pushforward, layer_forward,
                            layer_jacobian_logdet, potential,
                            potential_gradient)

seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

def test_layer_params_validation():
    m = np.array([[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="positive"):
        LayerParams(np.array([-1.0]), m, np.array([1.0]))
    with pytest.raises(ValueError, match="etas"):
        LayerParams(np.array([1.0]), m, np.array([0.7]))
    with pytest.raises(ValueError, match="etas must be positive"):
        LayerParams(np.array([1.0, 1.0]),
                    np.array([[0, 0, 1.0], [0, 1.0, 0]]),
                    np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        LayerParams(np.array([1.0, 2.0]), m, np.array([1.0]))


def test_layer_params_renormalizes_far_centers():
    layer = LayerParams(np.array([1.0]), np.array([[0.0, 0.0, 3.0]]),
                        np.array([1.0]))
    assert np.allclose(layer.centers, [[0.0, 0.0, 1.0]])


def test_layer_params_keeps_unit_centers_bit_exact(rng):
    c = geometry.random_unit(rng, 4)
    layer = LayerParams(np.full(4, 2.0), c, np.full(4, 0.25))
    assert np.array_equal(layer.centers, c)


def test_component_params_shape_checks(rng):
    layers = tuple(random_layer(rng, p=2) for _ in range(3))
    comp = ComponentParams(layers)
    assert comp.K == 3 and comp.p == 2
    with pytest.raises(ValueError, match="share p"):
        ComponentParams((random_layer(rng, p=1), random_layer(rng, p=2)))
    with pytest.raises(ValueError, match="at least one"):
        ComponentParams(())


def test_stacked_round_trip(rng):
    comp = random_component(rng, K=4, p=3)
    rebuilt = ComponentParams.from_stacked(*comp.stacked())
    for a, b in zip(comp.layers, rebuilt.layers):
        assert np.array_equal(a.betas, b.betas)
        assert np.array_equal(a.centers, b.centers)
        assert np.array_equal(a.etas, b.etas)


# ---------------------------------------------------------------------------
# potential and transport map
# ---------------------------------------------------------------------------

def test_potential_closed_form_single_bump():
    m = np.array([[0.0, 0.0, 1.0]])
    layer = LayerParams(np.array([2.0]), m, np.array([1.0]))
    x = geometry.normalize(np.array([1.0, 0.0, 1.0]))
    t = x[2]
    assert np.isclose(potential(x, layer), np.exp(2.0 * (t - 1.0)) / 2.0,
                      rtol=1e-15)
    # at the center the exponent vanishes
    assert np.isclose(potential(m[0], layer), 0.5, rtol=1e-15)


def test_potential_gradient_matches_ambient_finite_differences(rng):
    # the potential formula extends smoothly off the sphere, so the
    # Riemannian gradient is the projected ambient finite difference
    layer = random_layer(rng, p=3)
    x = geometry.random_unit(rng)
    h = 1e-6
    amb = np.zeros(3)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        amb[j] = (potential(x + e, layer) - potential(x - e, layer)) / (2 * h)
    expected = geometry.project_to_tangent(x, amb)
    assert np.allclose(potential_gradient(x, layer), expected, atol=1e-8)


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_potential_gradient_norm_below_one(seed):
    # convex eta weights bound the gradient norm strictly below 1 < pi/2
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, p=int(rng.integers(1, 4)), beta_low=0.01,
                         beta_high=40.0)
    x = geometry.random_unit(rng, 20)
    norms = np.linalg.norm(potential_gradient(x, layer), axis=-1)
    assert np.all(norms < 1.0)


def test_layer_forward_is_exp_of_gradient(rng):
    layer = random_layer(rng, p=2)
    x = geometry.random_unit(rng, 8)
    expected = geometry.exp_map(x, potential_gradient(x, layer))
    assert np.allclose(layer_forward(x, layer), expected, atol=1e-15)
    assert np.allclose(np.linalg.norm(layer_forward(x, layer), axis=1), 1.0,
                       atol=1e-12)


def test_layer_forward_moves_points_toward_center(rng):
    # the potential grows toward the bump center, so transport reduces the
    # geodesic distance to it
    m = geometry.random_unit(rng)
    layer = LayerParams(np.array([3.0]), m[None], np.array([1.0]))
    x = geometry.random_unit(rng, 50)
    before = geometry.geodesic_distance(x, m)
    after = geometry.geodesic_distance(layer_forward(x, layer), m)
    keep = before > 1e-3
    assert np.all(after[keep] < before[keep])


# ---------------------------------------------------------------------------
# Jacobian log determinant
# ---------------------------------------------------------------------------

def test_layer_jacobian_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(60):
        layer = random_layer(rng, p=int(rng.integers(1, 3)))
        x = geometry.random_unit(rng)
        ana = np.exp(layer_jacobian_logdet(x, layer))
        ref = fd_layer_absdet(x, layer)
        worst = max(worst, abs(ana - ref) / ref)
    assert worst < 1e-5


def test_layer_jacobian_at_center_closed_form():
    # at x = m the tangent Jacobian of a single bump is (1 - eta) I, hence
    # log |det| = 2 log(1 - eta); realized with p = 2 and a far second bump
    m = np.array([0.0, 0.0, 1.0])
    far = np.array([0.0, 0.0, -1.0])
    eta = 0.35
    layer = LayerParams(np.array([4.0, 300.0]), np.stack([m, far]),
                        np.array([eta, 1.0 - eta]))
    got = layer_jacobian_logdet(m, layer)
    assert np.isclose(got, 2.0 * np.log(1.0 - eta), atol=1e-10)


def test_layer_jacobian_degenerate_at_full_weight_center():
    # p = 1 forces eta = 1, so the Jacobian vanishes exactly at the center
    m = np.array([0.0, 0.0, 1.0])
    layer = LayerParams(np.array([2.0]), m[None], np.array([1.0]))
    with pytest.raises(DegenerateJacobianError):
        layer_jacobian_logdet(m, layer)


def test_layer_jacobian_batch_matches_single(rng):
    layer = random_layer(rng, p=2)
    xs = geometry.random_unit(rng, 25)
    batch = layer_jacobian_logdet(xs, layer)
    single = np.array([layer_jacobian_logdet(x, layer) for x in xs])
    assert np.allclose(batch, single, atol=1e-12)


def test_high_concentration_layer_is_near_identity_off_cap(rng):
    # large beta confines the transport to a small cap around the center;
    # away from it (inner product below 0.5) the map and the log
    # determinant are numerically the identity
    m = np.array([0.0, 0.0, 1.0])
    layer = LayerParams(np.array([50.0]), m[None], np.array([1.0]))
    x = geometry.random_unit(rng, 200)
    x = x[x @ m < 0.5]
    assert np.max(np.abs(layer_jacobian_logdet(x, layer))) < 1e-8
    assert np.max(np.linalg.norm(layer_forward(x, layer) - x, axis=1)) < 1e-9


def test_low_concentration_layer_still_transports(rng):
    # beta -> 0 does not approach the identity: the gradient tends to
    # eta (m - t x), an order-one displacement, and the finite-difference
    # oracle confirms the analytic determinant there
    m = np.array([0.0, 0.0, 1.0])
    layer = LayerParams(np.array([1e-6]), m[None], np.array([1.0]))
    x = geometry.normalize(np.array([1.0, 0.0, 0.2]))
    moved = layer_forward(x, layer)
    expected_step = np.linalg.norm(geometry.project_to_tangent(x, m))
    assert geometry.geodesic_distance(x, moved) > 0.5 * expected_step
    ana = np.exp(layer_jacobian_logdet(x, layer))
    assert np.isclose(ana, fd_layer_absdet(x, layer), rtol=1e-6)


# ---------------------------------------------------------------------------
# component pushforward and log density
# ---------------------------------------------------------------------------

def test_component_pushforward_composes_layers(rng):
    comp = random_component(rng, K=3, p=2)
    x = geometry.random_unit(rng)
    y_expected = x
    logdet_expected = 0.0
    for layer in comp.layers:
        logdet_expected += layer_jacobian_logdet(y_expected, layer)
        y_expected = layer_forward(y_expected, layer)
    y, logdet = component_pushforward(x, comp)
    assert np.allclose(y, y_expected, atol=1e-10)
    assert np.isclose(logdet, logdet_expected, atol=1e-10)


def test_component_logdensity_is_logdet_minus_log4pi(rng):
    comp = random_component(rng, K=2, p=1)
    x = geometry.random_unit(rng, 6)
    _, logdet = component_pushforward(x, comp)
    assert np.allclose(component_logdensity(x, comp), logdet - LOG_4PI,
                       atol=1e-12)


def test_component_logdensity_single_matches_batch(rng):
    comp = random_component(rng, K=2, p=2)
    xs = geometry.random_unit(rng, 7)
    batch = component_logdensity(xs, comp)
    single = np.array([component_logdensity(x, comp) for x in xs])
    assert np.allclose(batch, single, atol=1e-12)


def test_component_logdensity_chunking_invariance(rng):
    # evaluation pads batches to a fixed chunk; results must not depend on
    # how the batch is split
    comp = random_component(rng, K=2, p=1)
    xs = geometry.random_unit(rng, 5000)
    full = component_logdensity(xs, comp)
    parts = np.concatenate([component_logdensity(xs[:2500], comp),
                            component_logdensity(xs[2500:], comp)])
    assert np.array_equal(full, parts)


def test_component_density_integrates_to_one(rng):
    from spheremix.quadrature import build_grid, integrate
    comp = random_component(rng, K=8, p=1)
    grid = build_grid(20000)
    total = integrate(lambda q: np.exp(component_logdensity(q, comp)), grid)
    assert abs(total - 1.0) < 1e-3


def test_component_density_zonal_oracle():
    # a component whose centers all sit at the pole has a zonal density, so
    # adaptive 1-d quadrature over the colatitude provides an independent
    # normalization check
    pole = np.array([[0.0, 0.0, 1.0]])
    comp = ComponentParams(tuple(
        LayerParams(np.array([b]), pole, np.array([1.0]))
        for b in (1.5, 3.0)))

    def q(z):
        s = np.sqrt(max(0.0, 1.0 - z * z))
        x = np.array([s, 0.0, z])
        return np.exp(component_logdensity(x, comp))

    assert abs(zonal_integral(q) - 1.0) < 1e-6


def test_nonunit_input_rejected(rng):
    comp = random_component(rng, K=1, p=1)
    with pytest.raises(ValueError):
        component_logdensity(np.array([0.0, 0.0, 2.0]), comp)
