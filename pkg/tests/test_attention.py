import numpy as np
import pytest

from pointattn import autodiff as ad
from pointattn import checks
from pointattn.attention import AttentionSizeError, PSAParams, attention_map, psa_forward


def block(c, rng, f1=None, gamma=0.0, max_points=4096):
    store = ad.ParameterStore()
    p = PSAParams.create(store, "p", c, f1, rng, max_points)
    p.gamma.value[...] = gamma
    return p


def test_singleton_map(rng):
    np.testing.assert_array_equal(attention_map(rng.normal(size=(1, 4)), block(4, rng)).value, [[1.0]])


def test_zero_weights_give_uniform_map(rng):
    p = block(4, rng)
    p.A_w.value[...] = 0
    p.B_w.value[...] = 0
    np.testing.assert_allclose(attention_map(rng.normal(size=(5, 4)), p).value, 0.2)


def test_map_matches_scalar_recompute(rng):
    p = block(3, rng, f1=2)
    p.A_b.value[...] = rng.normal(size=2)
    x = rng.normal(size=(3, 3))
    a = x @ p.A_w.value + p.A_b.value
    b = x @ p.B_w.value
    want = np.zeros((3, 3))
    for i in range(3):
        logits = [sum(a[i, f] * b[j, f] for f in range(2)) for j in range(3)]
        ex = [np.exp(v - max(logits)) for v in logits]
        want[i] = [e / sum(ex) for e in ex]
    np.testing.assert_allclose(attention_map(x, p).value, want, atol=1e-14)


def test_fresh_block_is_identity(rng):
    x = rng.normal(size=(9, 6))
    np.testing.assert_array_equal(psa_forward(x, block(6, rng)).value, x)


def test_identical_rows_stay_identical(rng):
    x = np.tile(rng.normal(size=(1, 4)), (2, 1))
    out = psa_forward(x, block(4, rng, gamma=0.9)).value
    np.testing.assert_array_equal(out[0], out[1])


def test_size_cap(rng):
    with pytest.raises(AttentionSizeError):
        psa_forward(rng.normal(size=(9, 4)), block(4, rng, max_points=8))
    with pytest.raises(ValueError):
        psa_forward(rng.normal(size=(3, 5)), block(4, rng))


def test_return_map(rng):
    out, s = psa_forward(rng.normal(size=(7, 4)), block(4, rng, gamma=0.5), return_map=True)
    assert s.shape == (7, 7) and out.shape == (7, 4)


def test_gradient():
    assert checks.check_gradient("psa_forward", seeds=3).ok


def test_invariants_quick():
    for c in (checks.check_attention_rows(30), checks.check_gamma_zero(10), checks.check_psa_equivariance(10)):
        assert c.ok, c.detail
