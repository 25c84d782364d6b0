import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturemem.encoder import (EncoderConfig, classify, encode,
                                encode_backward, encode_forward,
                                init_decoder_params, init_encoders,
                                momentum_update, normalize_adjacency,
                                skeleton_graph)
from gesturemem.errors import NonFiniteError, StructuralError

from helpers import fd_grad, fd_param_grads, param_count, rel_error

TINY = EncoderConfig(width=4, feature_dim=4, blocks=2, temporal_kernel=3)
GRAPH = skeleton_graph()


def tiny_setup(seed=0, n_classes=3):
    params, params_l, decoder = init_encoders(TINY, n_classes, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(2, 3, 6, 3))
    return params, params_l, decoder, x


def test_skeleton_graph_structure():
    g = skeleton_graph()
    expected = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1]], dtype=float)
    assert np.array_equal(g.adjacency, expected)
    deg = expected.sum(axis=1)
    manual = expected / np.sqrt(deg[:, None] * deg[None, :])
    assert np.allclose(g.normalized, manual)
    assert np.allclose(g.normalized, g.normalized.T)


def test_encode_deterministic_and_unit_norm():
    params, _, _, x = tiny_setup()
    f1, _ = encode_forward(params, x, GRAPH.normalized, TINY)
    f2, _ = encode_forward(params, x.copy(), GRAPH.normalized, TINY)
    assert np.array_equal(f1, f2)
    assert np.allclose(np.linalg.norm(f1, axis=1), 1.0, atol=1e-6)


def test_encode_length_agnostic():
    params, _, _, _ = tiny_setup()
    rng = np.random.default_rng(5)
    for t in (3, 6, 60):
        f = encode(params, rng.normal(size=(3, t, 3)), GRAPH.normalized, TINY)
        assert f.shape == (TINY.feature_dim,)
        assert abs(np.linalg.norm(f) - 1.0) < 1e-6


def test_encode_input_validation():
    params, _, _, _ = tiny_setup()
    bad = np.zeros((3, 6, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        encode(params, bad, GRAPH.normalized, TINY)
    with pytest.raises(StructuralError):
        encode(params, np.zeros((3, 2, 3)), GRAPH.normalized, TINY)  # T < kernel
    with pytest.raises(StructuralError):
        encode(params, np.zeros((4, 6, 3)), GRAPH.normalized, TINY)  # wrong C


def test_encoder_param_gradients_match_finite_differences():
    params, _, _, x = tiny_setup()
    assert param_count(params) <= 500
    rng = np.random.default_rng(7)
    probe = rng.normal(size=(x.shape[0], TINY.feature_dim))

    def loss(p):
        f, _ = encode_forward(p, x, GRAPH.normalized, TINY)
        return float((probe * f).sum())

    f, cache = encode_forward(params, x, GRAPH.normalized, TINY, want_cache=True)
    grads, _ = encode_backward(cache, probe)
    fd = fd_param_grads(lambda p: loss(p), params)
    for name in params:
        assert rel_error(grads[name], fd[name]) < 1e-4, name


def test_encoder_input_gradient_matches_finite_differences():
    params, _, _, x = tiny_setup(seed=3)
    probe = np.random.default_rng(11).normal(size=(x.shape[0], TINY.feature_dim))

    def loss(xv):
        f, _ = encode_forward(params, xv, GRAPH.normalized, TINY)
        return float((probe * f).sum())

    _, cache = encode_forward(params, x, GRAPH.normalized, TINY, want_cache=True)
    _, g_x = encode_backward(cache, probe)
    fd = fd_grad(loss, x)
    assert rel_error(g_x, fd) < 1e-4


def test_thigh_permutation_invariance():
    # swapping the two thigh joints permutes adjacency rows/cols onto itself
    params, _, _, _ = tiny_setup(seed=9)
    x = np.random.default_rng(13).normal(size=(3, 8, 3))
    perm = [0, 2, 1]
    adj_perm = GRAPH.adjacency[np.ix_(perm, perm)]
    assert np.array_equal(adj_perm, GRAPH.adjacency)
    f = encode(params, x, GRAPH.normalized, TINY)
    f_swapped = encode(params, x[:, :, perm],
                       normalize_adjacency(adj_perm), TINY)
    assert np.allclose(f, f_swapped, atol=1e-6)


def test_init_long_term_is_exact_copy_and_seed_determinism():
    s1, l1, d1 = init_encoders(TINY, 4, seed=42)
    s2, l2, d2 = init_encoders(TINY, 4, seed=42)
    s3, _, _ = init_encoders(TINY, 4, seed=43)
    for k in s1:
        assert np.array_equal(s1[k], l1[k])
        assert np.array_equal(s1[k], s2[k])
        assert s1[k] is not l1[k]
    assert np.array_equal(d1["w"], d2["w"])
    assert any(not np.array_equal(s1[k], s3[k]) for k in s1)


def test_momentum_update_copy_identity_at_zero():
    s, l, _ = init_encoders(TINY, 3, seed=1)
    out = momentum_update({k: v + 1.0 for k, v in l.items()}, s, 0.0)
    for k in s:
        assert np.array_equal(out[k], s[k])


def test_momentum_update_fixed_point():
    s, l, _ = init_encoders(TINY, 3, seed=2)
    for coef in (0.0, 0.5, 0.99):
        out = momentum_update(l, s, coef)
        for k in s:
            assert np.array_equal(out[k], s[k])  # theta_L == theta_S initially


def test_momentum_update_scalar_case():
    out = momentum_update({"p": np.array([1.0])}, {"p": np.array([0.0])}, 0.99)
    assert out["p"][0] == pytest.approx(0.99, abs=0)


def test_momentum_update_matches_convex_combination():
    s, l, _ = init_encoders(TINY, 3, seed=4)
    l = {k: v + np.random.default_rng(5).normal(size=v.shape) for k, v in l.items()}
    out = momentum_update(l, s, 0.7)
    for k in s:
        assert np.allclose(out[k], 0.7 * l[k] + 0.3 * s[k], atol=1e-12)


@given(st.floats(min_value=0.0, max_value=0.999), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_momentum_gap_decays_geometrically(coef, seed):
    rng = np.random.default_rng(seed)
    s = {"p": rng.normal(size=7)}
    l = {"p": rng.normal(size=7)}
    gap = np.linalg.norm(l["p"] - s["p"])
    for _ in range(4):
        l = momentum_update(l, s, coef)
        new_gap = np.linalg.norm(l["p"] - s["p"])
        # exact up to float rounding: one rounding per element plus the
        # absorption of coef*(l-s) into s and the norm accumulation
        assert new_gap == pytest.approx(coef * gap, rel=1e-9, abs=5e-15)
        gap = new_gap


def test_momentum_update_shape_mismatch():
    with pytest.raises(StructuralError):
        momentum_update({"p": np.zeros(3)}, {"p": np.zeros(4)}, 0.5)
    with pytest.raises(StructuralError):
        momentum_update({"p": np.zeros(3)}, {"q": np.zeros(3)}, 0.5)


def test_classify_uniform_with_zero_decoder():
    dec = {"w": np.zeros((11, 4)), "b": np.zeros(11)}
    probs = classify(dec, np.ones(4))
    assert np.allclose(probs, 1.0 / 11, atol=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_classify_shift_invariance():
    rng = np.random.default_rng(3)
    dec = init_decoder_params(4, 5, rng, dtype=np.float64)
    f = rng.normal(size=4)
    base = classify(dec, f)
    shifted = dict(dec, b=dec["b"] + 7.5)
    assert np.allclose(classify(shifted, f), base, atol=1e-12)


def test_classify_closed_form():
    dec = {"w": np.zeros((3, 2)), "b": np.log(np.array([1.0, 2.0, 1.0]))}
    probs = classify(dec, np.zeros(2))
    assert np.allclose(probs, [0.25, 0.5, 0.25], atol=1e-12)
