import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from crossret.errors import ShapeError
from crossret.fusion import (
    AttentionParams,
    FusionParams,
    dynamic_fuse,
    guided_attention,
    interact,
    midf_forward,
    self_attention,
)
from crossret.linalg import finite_diff_gradient
from crossret.toy import flatten, unflatten
from oracles import attention_literal, softmax_list


def rand_attn(rng, d):
    return AttentionParams(*(rng.normal(size=(d, d)) for _ in range(3)))


def sigmoid_scalar(x):
    return 1.0 / (1.0 + math.exp(-x))


def interact_literal(g_rows, l_rows):
    d = len(g_rows[0])
    g = [sum(r[c] for r in g_rows) / len(g_rows) for c in range(d)]
    l = [sum(r[c] for r in l_rows) / len(l_rows) for c in range(d)]
    return [g[c] * sigmoid_scalar(l[c]) for c in range(d)], [l[c] + g[c] for c in range(d)]


def fuse_literal(vg, vl, wa, wb):
    mix = [a + b for a, b in zip(vg, vl)]
    hidden = [max(0.0, sum(mix[i] * wa[i][j] for i in range(len(mix)))) for j in range(len(wa[0]))]
    logits = [sum(hidden[i] * wb[i][j] for i in range(len(hidden))) for j in range(2)]
    g1, g2 = softmax_list(logits)
    return [g1 * a + g2 * b for a, b in zip(vg, vl)], (g1, g2)


# -- attention ---------------------------------------------------------------


def test_self_attention_examples():
    rng = np.random.default_rng(0)
    p = rand_attn(rng, 3)
    x = rng.normal(size=(1, 3))
    np.testing.assert_allclose(self_attention(x, p), x @ p.w_v, atol=1e-15)
    zero_v = AttentionParams(p.w_q, p.w_k, np.zeros((3, 3)))
    np.testing.assert_array_equal(self_attention(rng.normal(size=(4, 3)), zero_v), np.zeros((4, 3)))


def test_self_attention_matches_literal():
    rng = np.random.default_rng(1)
    p = rand_attn(rng, 4)
    x = rng.normal(size=(2, 4))
    expected = attention_literal(x.tolist(), x.tolist(), p.w_q.tolist(), p.w_k.tolist(), p.w_v.tolist())
    np.testing.assert_allclose(self_attention(x, p), expected, rtol=0, atol=1e-12)


def test_guided_attention_examples():
    rng = np.random.default_rng(2)
    p = rand_attn(rng, 3)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(1, 3))
    out = guided_attention(x, y, p)
    for row in out:
        np.testing.assert_allclose(row, (y @ p.w_v)[0], atol=1e-15)
    z = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(guided_attention(z, z, p), self_attention(z, p))


def test_guided_attention_matches_literal():
    rng = np.random.default_rng(3)
    p = rand_attn(rng, 4)
    x, y = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    expected = attention_literal(x.tolist(), y.tolist(), p.w_q.tolist(), p.w_k.tolist(), p.w_v.tolist())
    out = guided_attention(x, y, p)
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_attention_shape_error():
    p = AttentionParams.identity(3)
    with pytest.raises(ShapeError):
        guided_attention(np.ones((2, 3)), np.ones((2, 4)), p)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_attention_rows_are_convex_combinations(rx, ry, seed):
    rng = np.random.default_rng(seed)
    d = 5
    p = rand_attn(rng, d)
    x, y = rng.normal(size=(rx, d)), rng.normal(size=(ry, d))
    values = y @ p.w_v
    out = guided_attention(x, y, p)
    # with ry <= 4 < d + 1 the value rows are affinely independent, so weights are unique
    system = np.vstack([values.T, np.ones((1, ry))])
    for row in out:
        w, *_ = np.linalg.lstsq(system, np.append(row, 1.0), rcond=None)
        np.testing.assert_allclose(system @ w, np.append(row, 1.0), atol=1e-9)
        assert np.all(w >= -1e-9) and abs(w.sum() - 1.0) < 1e-9


# -- interaction and fusion head ---------------------------------------------


def test_interact_examples():
    g = np.array([[1.0, -2.0, 3.0]])
    vg, vl = interact(g, np.zeros((2, 3)))
    np.testing.assert_array_equal(vg, 0.5 * g[0])
    np.testing.assert_array_equal(vl, g[0])
    l = np.array([[0.4, 0.1, -0.7]])
    vg, vl = interact(np.zeros((1, 3)), l)
    np.testing.assert_array_equal(vg, 0.0)
    np.testing.assert_array_equal(vl, l[0])


def test_interact_matches_literal():
    rng = np.random.default_rng(4)
    g, l = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    vg, vl = interact(g, l)
    eg, el = interact_literal(g.tolist(), l.tolist())
    np.testing.assert_allclose(vg, eg, rtol=0, atol=1e-12)
    np.testing.assert_allclose(vl, el, rtol=0, atol=1e-12)


def test_dynamic_fuse_examples():
    rng = np.random.default_rng(5)
    vg, vl = rng.normal(size=4), rng.normal(size=4)
    v, gamma = dynamic_fuse(vg, vl, rng.normal(size=(4, 2)), np.zeros((2, 2)))
    np.testing.assert_array_equal(gamma, [0.5, 0.5])
    np.testing.assert_allclose(v, (vg + vl) / 2, atol=1e-15)
    u = rng.normal(size=4)
    v, _ = dynamic_fuse(u, u.copy(), rng.normal(size=(4, 2)), rng.normal(size=(2, 2)))
    np.testing.assert_array_equal(v, u)


def test_dynamic_fuse_matches_literal():
    rng = np.random.default_rng(6)
    vg, vl = rng.normal(size=4), rng.normal(size=4)
    wa, wb = rng.normal(size=(4, 2)), rng.normal(size=(2, 2))
    v, gamma = dynamic_fuse(vg, vl, wa, wb)
    ev, eg = fuse_literal(vg.tolist(), vl.tolist(), wa.tolist(), wb.tolist())
    np.testing.assert_allclose(v, ev, rtol=0, atol=1e-12)
    np.testing.assert_allclose(gamma, eg, rtol=0, atol=1e-12)


def test_dynamic_fuse_shape_error():
    with pytest.raises(ShapeError):
        dynamic_fuse(np.ones(3), np.ones(3), np.ones((4, 2)), np.ones((2, 2)))


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
def test_gamma_is_a_distribution(seed, scale):
    rng = np.random.default_rng(seed)
    vg, vl = scale * rng.normal(size=4), scale * rng.normal(size=4)
    _, gamma = dynamic_fuse(vg, vl, rng.normal(size=(4, 3)), rng.normal(size=(3, 2)))
    assert abs(gamma.sum() - 1.0) <= 1e-12
    assert np.all(gamma >= 0) and np.all(gamma <= 1)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 2))
def test_gamma_strictly_inside_for_moderate_logits(seed, scale):
    # for logit gaps beyond ~37 the larger weight rounds to exactly 1 in float64
    rng = np.random.default_rng(seed)
    vg, vl = scale * rng.normal(size=4), scale * rng.normal(size=4)
    w_alpha, w_beta = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    logits = np.maximum((vg + vl) @ w_alpha, 0) @ w_beta
    assume(abs(logits[0] - logits[1]) < 30)
    _, gamma = dynamic_fuse(vg, vl, w_alpha, w_beta)
    assert np.all(gamma > 0) and np.all(gamma < 1)


# -- full forward ------------------------------------------------------------


def staged_literal(g, l, p):
    t = lambda m: m.tolist()
    g_sa = attention_literal(t(g), t(g), t(p.sa_g.w_q), t(p.sa_g.w_k), t(p.sa_g.w_v))
    l_sa = attention_literal(t(l), t(l), t(p.sa_l.w_q), t(p.sa_l.w_k), t(p.sa_l.w_v))
    g_ga = attention_literal(g_sa, l_sa, t(p.ga_g.w_q), t(p.ga_g.w_k), t(p.ga_g.w_v))
    l_ga = attention_literal(l_sa, g_sa, t(p.ga_l.w_q), t(p.ga_l.w_k), t(p.ga_l.w_v))
    vg, vl = interact_literal(g_ga, l_ga)
    return fuse_literal(vg, vl, t(p.w_alpha), t(p.w_beta))


def test_midf_identity_single_rows():
    # with one row on each side, attention returns the values of the other input,
    # so the global slot carries the local vector and vice versa
    d = 4
    rng = np.random.default_rng(7)
    eye = AttentionParams.identity(d)
    p = FusionParams(eye, eye, eye, eye, rng.normal(size=(d, 2)), rng.normal(size=(2, 2)))
    g, l = rng.normal(size=(1, d)), rng.normal(size=(1, d))
    out = midf_forward(g, l, p)
    v, gamma = dynamic_fuse(*interact(l, g), p.w_alpha, p.w_beta)
    np.testing.assert_allclose(out.vector, v, atol=1e-15)
    np.testing.assert_allclose(out.gamma, gamma, atol=1e-15)


def test_midf_zero_global():
    rng = np.random.default_rng(8)
    p = FusionParams.init(4, rng)
    l = rng.normal(size=(3, 4))
    out = midf_forward(np.zeros((2, 4)), l, p)
    # zero global keys give uniform attention over the attended local rows
    l_sa = self_attention(l, p.sa_l)
    g_bar = (l_sa @ p.ga_g.w_v).mean(axis=0)
    g1, g2 = out.gamma
    np.testing.assert_allclose(out.vector, (0.5 * g1 + g2) * g_bar, atol=1e-12)


def test_midf_zero_guided_global_values_leave_only_local_term():
    rng = np.random.default_rng(9)
    p = FusionParams.init(4, rng)
    p = FusionParams(p.sa_g, p.sa_l, AttentionParams(p.ga_g.w_q, p.ga_g.w_k, np.zeros((4, 4))), p.ga_l, p.w_alpha, p.w_beta)
    g, l = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    out = midf_forward(g, l, p)
    l_ga = guided_attention(self_attention(l, p.sa_l), self_attention(g, p.sa_g), p.ga_l)
    np.testing.assert_allclose(out.vector, out.gamma[1] * l_ga.mean(axis=0), atol=1e-12)


def test_midf_matches_staged_oracle():
    rng = np.random.default_rng(10)
    d = 8
    p = FusionParams.init(d, rng)
    g, l = rng.normal(size=(3, d)), rng.normal(size=(5, d))
    out = midf_forward(g, l, p)
    ev, eg = staged_literal(g, l, p)
    np.testing.assert_allclose(out.vector, ev, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.gamma, eg, rtol=0, atol=1e-10)
    assert not out.global_only


def test_midf_empty_local_falls_back_to_global():
    rng = np.random.default_rng(11)
    p = FusionParams.init(4, rng)
    g = rng.normal(size=(3, 4))
    out = midf_forward(g, np.zeros((0, 4)), p)
    assert out.global_only
    np.testing.assert_allclose(out.vector, self_attention(g, p.sa_g).mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(out.gamma, [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_midf_output_dim(rg, rl, seed):
    rng = np.random.default_rng(seed)
    p = FusionParams.init(6, rng)
    out = midf_forward(rng.normal(size=(rg, 6)), rng.normal(size=(rl, 6)), p)
    assert out.vector.shape == (6,)
    assert np.all(np.isfinite(out.vector))


def test_fusion_params_json_and_validation():
    rng = np.random.default_rng(12)
    p = FusionParams.init(4, rng)
    q = FusionParams.from_json(p.to_json())
    np.testing.assert_array_equal(flatten(p), flatten(q))
    with pytest.raises(ShapeError):
        FusionParams(p.sa_g, p.sa_l, p.ga_g, p.ga_l, p.w_alpha, np.zeros((3, 2)))


def test_fd_gradient_richardson_behaviour():
    rng = np.random.default_rng(13)
    p = FusionParams.init(4, rng)
    g, l = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    theta = flatten(p)

    def probe(flat):
        return float(midf_forward(g, l, unflatten(p, flat)).vector.sum())

    g1, g2, g4 = (finite_diff_gradient(probe, theta, h) for h in (4e-3, 2e-3, 1e-3))
    assert np.all(np.isfinite(g1))
    ratio = np.linalg.norm(g1 - g2) / np.linalg.norm(g2 - g4)
    assert 3.0 < ratio < 5.0
