import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glass import autodiff as ad
from glass.autodiff import Parameter, Tensor
from glass.errors import AccumulationError, ConfigError, ShapeError
from glass.gradcheck import grad_check
from glass.layers import (AttentionConfig, LayerNorm, Linear, MultiHeadAttention, causal_mask,
                          layer_norm, linear, rope_rotate, scaled_dot_attention)
from glass.pretrain import LossConfig, huber, huber_branch_signature


class TestLinear:
    def test_identity_weight(self):
        x = np.arange(6.0).reshape(2, 3)
        out = linear(x, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_example(self):
        out = linear(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(out.data, [[4.0]])

    def test_zero_input_gives_bias(self):
        bias = np.array([1.5, -2.0])
        out = linear(np.zeros((3, 4)), np.zeros((4, 2)), bias)
        np.testing.assert_array_equal(out.data, np.broadcast_to(bias, (3, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            linear(np.zeros((2, 3)), np.zeros((4, 2)))


class TestRope:
    def test_position_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(1, 2, 8))
        out = rope_rotate(Tensor(x), np.array([0]), axis=0)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_pair_norms_preserved(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(7, 2, 8))
        out = rope_rotate(Tensor(x), np.arange(7), axis=0).data

        def pair_norm(v):
            return np.hypot(v[..., 0::2], v[..., 1::2])

        np.testing.assert_allclose(pair_norm(out), pair_norm(x), atol=1e-6)

    @given(m=st.integers(0, 50), n=st.integers(0, 50))
    @settings(max_examples=25, deadline=None)
    def test_relative_position_identity(self, m, n):
        rng = np.random.default_rng(42)
        q = rng.normal(size=(1, 1, 8))
        k = rng.normal(size=(1, 1, 8))
        rq = rope_rotate(Tensor(q), np.array([m]), axis=0).data
        rk = rope_rotate(Tensor(k), np.array([n]), axis=0).data
        rk_rel = rope_rotate(Tensor(k), np.array([n - m]), axis=0).data
        assert abs((rq * rk).sum() - (q * rk_rel).sum()) < 1e-6

    def test_odd_pair_dim_rejected(self):
        with pytest.raises(ConfigError):
            rope_rotate(Tensor(np.zeros((2, 1, 7))), np.arange(2), axis=0)

    def test_gradient_matches_fd(self):
        x = Parameter(np.random.default_rng(2).normal(size=(3, 4)))
        loss = (rope_rotate(x, np.arange(3), axis=0) * np.arange(12.0).reshape(3, 4)).sum()
        loss.backward()
        h = 1e-6
        flat = x.data.reshape(-1)
        for idx in (0, 5, 11):
            x0 = flat[idx]
            flat[idx] = x0 + h
            up = float((rope_rotate(x, np.arange(3), axis=0) * np.arange(12.0).reshape(3, 4)).sum().data)
            flat[idx] = x0 - h
            dn = float((rope_rotate(x, np.arange(3), axis=0) * np.arange(12.0).reshape(3, 4)).sum().data)
            flat[idx] = x0
            assert abs((up - dn) / (2 * h) - x.grad.reshape(-1)[idx]) < 1e-6


class TestAttention:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.normal(size=(1, 1, 3, 4)))
        k = Tensor(rng.normal(size=(1, 1, 1, 4)))
        v = Tensor(rng.normal(size=(1, 1, 1, 4)))
        out = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, np.broadcast_to(v.data, (1, 1, 3, 4)), atol=1e-12)

    def test_uniform_scores_average_values(self):
        v = Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
        q = Tensor(np.ones((1, 1, 2, 4)))
        k = Tensor(np.ones((1, 1, 3, 4)))
        out = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=2), (1, 1, 2, 1)), atol=1e-9)

    def test_causal_first_position_attends_self_only(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.normal(size=(1, 1, 3, 4)))
        k = Tensor(rng.normal(size=(1, 1, 3, 4)))
        v = Tensor(rng.normal(size=(1, 1, 3, 4)))
        out = scaled_dot_attention(q, k, v, mask=causal_mask(3, 3))
        np.testing.assert_allclose(out.data[0, 0, 0], v.data[0, 0, 0], atol=1e-12)

    def test_rows_sum_to_one(self):
        # with v = identity the output rows are exactly the attention weights
        rng = np.random.default_rng(2)
        q = Tensor(rng.normal(size=(1, 1, 5, 4)))
        k = Tensor(rng.normal(size=(1, 1, 5, 4)))
        v = Tensor(np.eye(5)[None, None])
        weights = scaled_dot_attention(q, k, v).data
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)
        weights = scaled_dot_attention(q, k, v, mask=causal_mask(5, 5)).data
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_mask_shape_mismatch(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(size=(1, 1, 3, 4)))
        with pytest.raises(ShapeError):
            scaled_dot_attention(q, q, q, mask=np.ones((7, 2), dtype=bool))

    def test_attention_config_validation(self):
        with pytest.raises(ConfigError):
            AttentionConfig(model_dim=10, heads=3)
        with pytest.raises(ConfigError):
            AttentionConfig(model_dim=12, heads=4)  # head dim 3 is odd


class TestLayerNorm:
    def test_constant_row_zeroed(self):
        out = layer_norm(np.full((2, 4), 7.0), np.ones(4), np.zeros(4))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_value_row(self):
        out = layer_norm(np.array([[-1.0, 1.0]]), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_gain_offset_affine(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 5))
        g, b = rng.normal(size=5), rng.normal(size=5)
        base = layer_norm(x, np.ones(5), np.zeros(5)).data
        out = layer_norm(x, g, b).data
        np.testing.assert_allclose(out, base * g + b, atol=1e-9)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        w = Parameter(np.random.default_rng(0).normal(size=(3, 2)))
        w.sum().backward()
        np.testing.assert_array_equal(w.grad, np.ones((3, 2)))

    def test_quadratic_gradient_is_w(self):
        w = Parameter(np.random.default_rng(1).normal(size=(4,)))
        (w * w * 0.5).sum().backward()
        np.testing.assert_allclose(w.grad, w.data, atol=1e-12)

    def test_double_backward_rejected(self):
        w = Parameter(np.ones(3))
        loss = w.sum()
        loss.backward()
        with pytest.raises(AccumulationError):
            loss.backward()

    def test_backward_needs_scalar(self):
        w = Parameter(np.ones(3))
        with pytest.raises(ShapeError):
            (w * 2.0).backward()

    def test_shared_subgraph_accumulates(self):
        x = Parameter(np.array([2.0]))
        y = Parameter(np.array([-4.0]))
        ((x + y) * (x + 1.0)).sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])
        np.testing.assert_allclose(y.grad, [3.0])

    def test_no_grad_builds_no_graph(self):
        w = Parameter(np.ones(3))
        with ad.no_grad():
            out = w * 2.0
        assert not out.requires_grad and out._parents == ()

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 8)).astype(np.float32)
        w = rng.normal(size=(8, 8)).astype(np.float32)

        def run():
            t = Tensor(x)
            return ad.softmax(ad.gelu(t @ Tensor(w)), axis=-1).data

        assert np.array_equal(run(), run())


class TestGradCheck:
    def test_quadratic_is_exact(self):
        w = Parameter(np.random.default_rng(0).normal(size=(5,)))
        report = grad_check(lambda: (w * w * 0.5).sum(), [("w", w)], step=1e-4, tol=1e-8,
                            samples_per_param=None)
        assert report.passed
        assert report.max_rel_err < 1e-8

    def test_huber_boundary_coordinate_excluded(self):
        delta = 1.0
        cfg = LossConfig(huber_delta=delta)
        # one residual parked exactly on the kink: +/- step lands in different branches
        w = Parameter(np.array([delta, 0.2]))
        target = np.zeros(2)

        def fn():
            r = w - Tensor(target)
            sig = huber_branch_signature(w.data.reshape(1, -1), target.reshape(1, -1), cfg)
            return huber(r, delta).sum(), sig

        report = grad_check(fn, [("w", w)], step=1e-4, tol=1e-6, samples_per_param=None)
        assert ("w", 0) in report.excluded
        assert report.passed  # the smooth coordinate still checks out

    def test_attention_block_gradients(self):
        rng = np.random.default_rng(7)
        mha = MultiHeadAttention(AttentionConfig(8, 2, causal=True), rng, dtype=np.float64)
        x = rng.normal(size=(1, 4, 8))
        coeffs = rng.normal(size=(1, 4, 8))
        pos = np.arange(4)

        def fn():
            return (mha(Tensor(x), Tensor(x), pos, pos) * Tensor(coeffs)).sum()

        report = grad_check(fn, mha.named_parameters(), step=1e-4, tol=1e-4,
                            samples_per_param=3, rng=np.random.default_rng(0))
        assert report.checked >= 20
        assert report.passed, str(report)


class TestOpGradientsAgainstFd:
    @pytest.mark.parametrize("name,fn", [
        ("where_abs", lambda t: ad.where(t.data > 0, ad.absolute(t) * 2.0, t * t).sum()),
        ("softmax", lambda t: (ad.softmax(t, axis=-1) * np.arange(6.0).reshape(2, 3)).sum()),
        ("layer_norm", lambda t: (layer_norm(t, np.ones(3), np.zeros(3))
                                  * np.arange(6.0).reshape(2, 3)).sum()),
        ("sigmoid_tanh", lambda t: (ad.sigmoid(t) * ad.tanh(t)).mean()),
        ("concat_slice", lambda t: ad.concat([t[:, 1:], t[:, :-1]], axis=1).mean()),
        ("relu", lambda t: (ad.relu(t) * np.arange(6.0).reshape(2, 3)).sum()),
        ("div", lambda t: (t / (t * t + 1.0)).sum()),
    ])
    def test_against_central_differences(self, name, fn):
        w = Parameter(np.random.default_rng(11).normal(size=(2, 3)) + 0.1)
        report = grad_check(lambda: fn(w), [(name, w)], step=1e-5, tol=1e-6,
                            samples_per_param=None)
        assert report.passed, str(report)
