import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.lib.stride_tricks import sliding_window_view

from aosr import tensor as T
from aosr.errors import DimensionError, DTypeError, NonFiniteError, SingularityError
from aosr.gradcheck import grad_check
from aosr.tensor import Tensor


def brute_conv(x, w, stride, pad):
    """Direct loop convolution (cross-correlation), NCHW / OIHW."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[b, :, y * stride:y * stride + k, xx * stride:xx * stride + k]
                    out[b, o, y, xx] = np.sum(patch * w[o])
    return out


def scatter_deconv(x, w, stride, pad, output_padding=0):
    """Transposed convolution by explicit scatter-add of each input pixel."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    hf = (h - 1) * stride + k
    wf = (wd - 1) * stride + k
    full = np.zeros((n, cout, hf + output_padding, wf + output_padding))
    for b in range(n):
        for c in range(cin):
            for y in range(h):
                for xx in range(wd):
                    full[b, :, y * stride:y * stride + k, xx * stride:xx * stride + k] += x[b, c, y, xx] * w[c]
    ho = (h - 1) * stride - 2 * pad + k + output_padding
    wo = (wd - 1) * stride - 2 * pad + k + output_padding
    return full[:, :, pad:pad + ho, pad:pad + wo]


class TestConvOracles:
    def test_ones_kernel_padded(self):
        # each padded 3x3 window covers the whole 2x2 input
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = np.ones((1, 1, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        np.testing.assert_array_equal(out, brute_conv(x, w, 1, 1))
        np.testing.assert_array_equal(out[0, 0], [[10, 10], [10, 10]])

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        w = np.zeros((2, 2, 1, 1))
        w[0, 0] = w[1, 1] = 1.0
        np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(w)).data, x)

    def test_stride2_shape(self):
        assert T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=2,
                        padding=1).shape == (1, 1, 2, 2)

    def test_deconv_single_pixel_scatter(self):
        out = T.deconv2d(Tensor(np.array([[[[2.0]]]])), Tensor(np.ones((1, 1, 2, 2))), stride=2)
        np.testing.assert_array_equal(out.data[0, 0], [[2, 2], [2, 2]])

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_conv_matches_loops(self, rng, stride, pad):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        got = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad).data
        np.testing.assert_allclose(got, brute_conv(x, w, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("stride,pad,k,op", [(2, 1, 4, 0), (1, 1, 3, 0), (2, 1, 3, 1), (2, 0, 2, 0)])
    def test_deconv_matches_scatter(self, rng, stride, pad, k, op):
        x = rng.normal(size=(2, 3, 4, 5))
        w = rng.normal(size=(3, 2, k, k))
        got = T.deconv2d(Tensor(x), Tensor(w), stride=stride, padding=pad, output_padding=op).data
        np.testing.assert_allclose(got, scatter_deconv(x, w, stride, pad, op), atol=1e-12)

    def test_deconv_is_conv_adjoint(self, rng):
        # <conv(x), y> == <x, deconv(y)> with shared weights
        x = rng.normal(size=(1, 3, 8, 8))
        w = rng.normal(size=(5, 3, 3, 3))
        cx = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        y = rng.normal(size=cx.shape)
        dy = T.deconv2d(Tensor(y), Tensor(w), stride=2, padding=1, output_padding=1).data
        lhs = np.sum(cx * y)
        rhs = np.sum(x * dy)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_output_sizes(self):
        assert T.conv_output_size(64, 3, 2, 1) == 32
        assert T.deconv_output_size(16, 4, 2, 1) == 32


class TestElementwise:
    def test_add_per_channel_broadcast(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        out = T.sum_(x + b)
        out.backward()
        np.testing.assert_allclose(b.grad, np.full(3, 2 * 16.0))
        np.testing.assert_allclose(x.grad, 1.0)

    def test_unsupported_broadcast_names_axis(self):
        with pytest.raises(DimensionError, match="channel axis"):
            T.add(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 4, 2, 2))))

    def test_mixed_dtype_rejected(self):
        with pytest.raises(DTypeError):
            T.add(Tensor(np.zeros(2, np.float32)), Tensor(np.zeros(2, np.float64)))

    def test_int_data_promoted(self):
        assert Tensor(np.arange(3)).dtype == np.float64

    def test_nan_data_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.nan]))

    def test_division_near_zero(self):
        with pytest.raises(SingularityError):
            T.div(Tensor(np.ones(2)), Tensor(np.array([1.0, 1e-14])))

    def test_exp_overflow_is_typed(self):
        with pytest.raises(NonFiniteError):
            T.exp(Tensor(np.array([1e4])))

    def test_abs_subgradient_at_zero(self):
        x = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
        T.sum_(T.abs_(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_sigmoid_saturates_finitely(self):
        s = T.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0])))
        np.testing.assert_allclose(s.data, [0.0, 0.5, 1.0])

    def test_prelu_per_channel_and_scalar(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        got = T.prelu(Tensor(x), Tensor(np.array([0.1, 0.3]))).data
        want = np.where(x < 0, x * np.array([0.1, 0.3])[None, :, None, None], x)
        np.testing.assert_allclose(got, want)
        got = T.prelu(Tensor(x), Tensor(np.array([0.25]))).data
        np.testing.assert_allclose(got, np.where(x < 0, 0.25 * x, x))


class TestBackward:
    def test_gradient_accumulates_over_reuse(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x
        T.sum_(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_grad_of_constant_leaf_is_none(self):
        x = Tensor(np.ones(2), requires_grad=True)
        c = Tensor(np.ones(2))
        T.sum_(x * c).backward()
        assert c.grad is None

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(Exception):
            (x * 2.0).backward()

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_linearity_of_gradient(self, a, b):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        u = rng.normal(size=(1, 3, 5, 5))
        v = rng.normal(size=(1, 3, 5, 5))

        def grad_for(weights):
            x.zero_grad()
            out = T.conv2d(x, w, padding=1)
            T.sum_(out * Tensor(weights)).backward()
            return x.grad.copy()

        combined = grad_for(a * u + b * v)
        np.testing.assert_allclose(combined, a * grad_for(u) + b * grad_for(v), atol=1e-9)


SHAPES = [
    ((1, 1, 4, 4), (1, 1, 3, 3), 1, 1),
    ((2, 3, 6, 6), (4, 3, 3, 3), 2, 1),
    ((1, 2, 5, 7), (3, 2, 3, 3), 1, 0),
    ((1, 4, 8, 8), (2, 4, 3, 3), 2, 1),
    ((3, 1, 4, 6), (2, 1, 1, 1), 1, 0),
]


class TestGradCheckOps:
    @pytest.mark.parametrize("xs,ws,stride,pad", SHAPES)
    def test_conv(self, rng, xs, ws, stride, pad):
        x = Tensor(rng.normal(size=xs), requires_grad=True, name="x")
        w = Tensor(rng.normal(size=ws), requires_grad=True, name="w")
        b = Tensor(rng.normal(size=ws[0]), requires_grad=True, name="b")
        r = rng.normal(size=T.conv2d(x, w, b, stride, pad).shape)
        rep = grad_check(lambda: T.sum_(T.conv2d(x, w, b, stride, pad) * Tensor(r)), [x, w, b])
        assert rep.passed, rep.lines()

    @pytest.mark.parametrize("xs,ws,stride,pad", SHAPES)
    def test_deconv(self, rng, xs, ws, stride, pad):
        cout, cin = ws[0], ws[1]
        x = Tensor(rng.normal(size=(xs[0], cout) + xs[2:]), requires_grad=True, name="x")
        w = Tensor(rng.normal(size=(cout, cin) + ws[2:]), requires_grad=True, name="w")
        b = Tensor(rng.normal(size=cin), requires_grad=True, name="b")
        r = rng.normal(size=T.deconv2d(x, w, b, stride, pad).shape)
        rep = grad_check(lambda: T.sum_(T.deconv2d(x, w, b, stride, pad) * Tensor(r)), [x, w, b])
        assert rep.passed, rep.lines()

    def test_pointwise_chain(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True, name="x")
        s = Tensor(np.array([0.2]), requires_grad=True, name="slope")
        c = Tensor(rng.uniform(1, 2, size=(3,)), requires_grad=True, name="c")

        def f():
            h = T.prelu(x, s)
            h = T.sigmoid(h) * T.exp(h * 0.3) / (c + 1.0) - T.abs_(h + 0.05)
            return T.mean(h)

        rep = grad_check(f, [x, s, c])
        assert rep.passed, rep.lines()

    def test_injected_prelu_bug_is_caught(self, rng, monkeypatch):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True, name="x")
        s = Tensor(np.array([0.25]), requires_grad=True, name="slope")
        good = T.BACKWARD_RULES["prelu"]

        def wrong(ctx, g):
            gx, gs = good(ctx, g)
            return gx, gs * 0.5

        monkeypatch.setitem(T.BACKWARD_RULES, "prelu", wrong)
        rep = grad_check(lambda: T.sum_(T.prelu(x, s) * T.prelu(x, s)), [x, s])
        assert not rep.passed
        assert rep.failures == ["slope"]


def test_im2col_matches_sliding_window(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    cols, ho, wo = T._im2col(x, 3, 1, 0)
    win = sliding_window_view(x, (3, 3), axis=(2, 3))
    assert (ho, wo) == (3, 3)
    np.testing.assert_array_equal(cols[0, :, 4], win[0, :, 1, 1].reshape(-1))
