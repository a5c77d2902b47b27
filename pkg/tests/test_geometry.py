import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from spheremix import geometry

unit_vectors = st.builds(
    lambda seed: geometry.random_unit(np.random.default_rng(seed)),
    st.integers(0, 2**32 - 1))


def test_normalize_unit_norm(rng):
    w = rng.normal(size=(40, 3)) * rng.uniform(0.1, 50.0, (40, 1))
    out = geometry.normalize(w)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-14)


def test_normalize_keeps_direction():
    out = geometry.normalize(np.array([0.0, 0.0, 7.5]))
    assert np.allclose(out, [0.0, 0.0, 1.0])


def test_geodesic_distance_known_values():
    ez = np.array([0.0, 0.0, 1.0])
    ex = np.array([1.0, 0.0, 0.0])
    assert geometry.geodesic_distance(ez, ez) == 0.0
    assert np.isclose(geometry.geodesic_distance(ez, ex), np.pi / 2)
    assert np.isclose(geometry.geodesic_distance(ez, -ez), np.pi)


def test_geodesic_distance_clamps_rounding():
    # a unit vector whose self inner product exceeds 1 by rounding
    v = geometry.normalize(np.array([1.0, 1.0, 1.0]))
    assert geometry.geodesic_distance(v, v) == 0.0
    assert geometry.geodesic_distance(v, -v) == np.pi


@given(unit_vectors, unit_vectors)
@settings(max_examples=50)
def test_geodesic_distance_symmetric(a, b):
    assert np.isclose(geometry.geodesic_distance(a, b),
                      geometry.geodesic_distance(b, a), atol=1e-14)


@given(unit_vectors, unit_vectors, unit_vectors)
@settings(max_examples=50)
def test_geodesic_triangle_inequality(a, b, c):
    ab = geometry.geodesic_distance(a, b)
    bc = geometry.geodesic_distance(b, c)
    ac = geometry.geodesic_distance(a, c)
    assert ac <= ab + bc + 1e-12


def test_exp_map_zero_vector_is_identity():
    base = geometry.normalize(np.array([2.0, -1.0, 0.5]))
    out = geometry.exp_map(base, np.zeros(3))
    assert np.array_equal(out, base)


def test_exp_map_quarter_turn():
    ez = np.array([0.0, 0.0, 1.0])
    ex = np.array([1.0, 0.0, 0.0])
    out = geometry.exp_map(ez, (np.pi / 2) * ex)
    assert np.allclose(out, ex, atol=1e-15)


def test_exp_map_half_turn_reaches_antipode():
    ez = np.array([0.0, 0.0, 1.0])
    out = geometry.exp_map(ez, np.pi * np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, -ez, atol=1e-12)


@given(unit_vectors, st.floats(1e-9, 3.1), st.integers(0, 2**32 - 1))
@settings(max_examples=80)
def test_exp_map_arc_length_matches_distance(base, r, seed):
    # geodesic distance to the image equals the tangent norm for r < pi
    rng = np.random.default_rng(seed)
    e1, _ = geometry.tangent_basis(base)
    ang = rng.uniform(0, 2 * np.pi)
    e2 = np.cross(base, e1)
    v = r * (np.cos(ang) * e1 + np.sin(ang) * e2)
    y = geometry.exp_map(base, v)
    assert np.isclose(np.linalg.norm(y), 1.0, atol=1e-12)
    assert np.isclose(geometry.geodesic_distance(base, y), r, atol=1e-7)


def test_exp_map_batched_matches_loop(rng):
    base = geometry.random_unit(rng, 10)
    v = np.cross(base, geometry.random_unit(rng, 10))
    batched = geometry.exp_map(base, v)
    single = np.stack([geometry.exp_map(b, w) for b, w in zip(base, v)])
    assert np.array_equal(batched, single)


@given(unit_vectors)
@settings(max_examples=80)
def test_tangent_basis_orthonormal_right_handed(base):
    e1, e2 = geometry.tangent_basis(base)
    assert np.isclose(e1 @ e1, 1.0, atol=1e-14)
    assert np.isclose(e2 @ e2, 1.0, atol=1e-14)
    assert abs(e1 @ e2) < 1e-14
    assert abs(e1 @ base) < 1e-14
    assert abs(e2 @ base) < 1e-14
    assert np.isclose(np.linalg.det(np.stack([e1, e2, base])), 1.0, atol=1e-12)


@given(unit_vectors, unit_vectors)
@settings(max_examples=50)
def test_project_to_tangent_orthogonal_and_idempotent(base, w):
    t = geometry.project_to_tangent(base, w)
    assert abs(t @ base) < 1e-12
    assert np.allclose(geometry.project_to_tangent(base, t), t, atol=1e-14)


def test_project_to_tangent_kills_base():
    base = geometry.normalize(np.array([1.0, 2.0, 2.0]))
    assert np.allclose(geometry.project_to_tangent(base, base), 0.0,
                       atol=1e-15)


def test_random_unit_shapes_and_determinism():
    a = geometry.random_unit(np.random.default_rng(5))
    b = geometry.random_unit(np.random.default_rng(5))
    assert a.shape == (3,)
    assert np.array_equal(a, b)
    batch = geometry.random_unit(np.random.default_rng(5), 100)
    assert batch.shape == (100, 3)
    assert np.allclose(np.linalg.norm(batch, axis=1), 1.0, atol=1e-14)


def test_random_unit_covers_both_hemispheres():
    batch = geometry.random_unit(np.random.default_rng(7), 4000)
    for axis in range(3):
        frac = np.mean(batch[:, axis] > 0)
        assert 0.4 < frac < 0.6
