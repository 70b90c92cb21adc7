import numpy as np
import pytest

from pointattn import autodiff as ad
from pointattn import checks, oracles
from pointattn.cloud import seeded_rng
from pointattn.lae import (
    LAEConvParams,
    aggregate,
    edge_coefficients,
    lae_conv_forward,
    normalize_coefficients,
)


def params(c_in, c_out, rng, **fixed):
    store = ad.ParameterStore()
    p = LAEConvParams.create(store, "l", c_in, c_out, rng)
    for k, v in fixed.items():
        getattr(p, k).value[...] = v
    return p


def test_padding_slot_gives_zero_coefficient(rng):
    h = rng.normal(size=(3, 2))
    e = edge_coefficients(h, np.array([[0, 0], [1, 1], [2, 0]]), rng.normal(size=(2, 4)), rng.normal(size=4))
    assert e.value[0, 0] == 0.0 and e.value[1, 1] == 0.0


def test_hand_arithmetic_leaky_slope():
    h = np.array([[0.0], [2.0], [-3.0]])
    e = edge_coefficients(h, np.array([[1, 2], [1, 1], [2, 2]]), np.array([[1.0]]), np.array([1.0]))
    np.testing.assert_allclose(e.value[0], [2.0, -0.6])


def test_edges_match_scalar_loops(rng):
    h = rng.normal(size=(20, 4))
    g = rng.integers(0, 20, size=(20, 16))
    W, a = rng.normal(size=(4, 6)), rng.normal(size=6)
    got = edge_coefficients(h, g, W, a).value
    np.testing.assert_allclose(got, oracles.edge_coefficients(h, h, g, W, a), rtol=0, atol=1e-12)


def test_normalize_cases(rng):
    np.testing.assert_allclose(normalize_coefficients(np.full((2, 5), 3.0)).value, 0.2)
    np.testing.assert_array_equal(normalize_coefficients(np.array([[7.0]])).value, [[1.0]])
    e = rng.normal(size=(6, 16))
    np.testing.assert_array_equal(normalize_coefficients(e).value, ad.row_softmax(e).value)


def test_aggregate_cases(rng):
    h = rng.normal(size=(10, 3))
    g = rng.integers(0, 10, size=(10, 4))
    W = rng.normal(size=(3, 5))
    onehot = np.zeros((10, 4))
    onehot[:, 2] = 1.0
    np.testing.assert_array_equal(aggregate(onehot, h, g, W).value, (h @ W)[g[:, 2]])
    mean = aggregate(np.full((10, 4), 0.25), h, g, np.eye(3)).value
    np.testing.assert_allclose(mean, h[g].mean(axis=1), atol=1e-15)
    alpha = ad.row_softmax(rng.normal(size=(10, 4))).value
    np.testing.assert_allclose(aggregate(alpha, h, g, W).value, oracles.aggregate(alpha, h, g, W), atol=1e-12)


def test_aggregate_offset_form(rng):
    h = rng.normal(size=(6, 2))
    g = rng.integers(0, 6, size=(6, 3))
    W = rng.normal(size=(2, 3))
    alpha = np.full((6, 3), 1 / 3)
    want = ((h[g] - h[:, None, :]) @ W).mean(axis=1)
    np.testing.assert_allclose(aggregate(alpha, h, g, W, offsets=True).value, want, atol=1e-14)


def test_isolated_point_closed_form(rng):
    p = params(3, 4, rng, b=rng.normal(size=4))
    h = rng.normal(size=(1, 3))
    out, alpha = lae_conv_forward(h, np.zeros((1, 16), int), p, return_alpha=True)
    np.testing.assert_allclose(alpha.value, 1 / 16)
    want = np.maximum((h @ p.W.value) @ p.T.value + p.b.value, 0)
    np.testing.assert_allclose(out.value, want, atol=1e-14)


def test_identity_params_give_neighbor_mean(rng):
    p = params(3, 3, rng, W=np.eye(3), a=np.zeros(3), T=np.eye(3), b=np.zeros(3))
    h = np.abs(rng.normal(size=(12, 3)))  # positive so the relu is inert
    g = rng.integers(0, 12, size=(12, 16))
    np.testing.assert_allclose(lae_conv_forward(h, g, p).value, h[g].mean(axis=1), atol=1e-14)


def test_centers_subset(rng):
    p = params(3, 4, rng)
    h = rng.normal(size=(30, 3))
    centers = np.array([0, 5, 9])
    g = rng.integers(0, 30, size=(3, 16))
    assert lae_conv_forward(h, g, p, centers=centers).shape == (3, 4)
    with pytest.raises(ValueError):
        lae_conv_forward(h, g, p)


def test_shape_errors(rng):
    p = params(3, 4, rng)
    with pytest.raises(ValueError):
        lae_conv_forward(rng.normal(size=(5, 2)), np.zeros((5, 16), int), p)
    with pytest.raises(ValueError):
        lae_conv_forward(rng.normal(size=(5, 3)), np.full((5, 16), 5), p)


@pytest.mark.parametrize("name", ["edge_coefficients", "aggregate", "lae_conv_forward"])
def test_gradients(name):
    assert checks.check_gradient(name, seeds=3).ok


def test_invariants_quick():
    for c in (checks.check_alpha_rows(30), checks.check_onehot_reduction(10),
              checks.check_uniform_reduction(10), checks.check_lae_equivariance(10)):
        assert c.ok, c.detail
