import numpy as np
import pytest

from acdm_bench import tensor as T
from acdm_bench.tensor import Tensor
from acdm_bench.tensor.checkpoint import CheckpointError, load_weights, save_weights
from acdm_bench.tensor.gradcheck import gradcheck

RTOL = 1e-4


def _t(rng, shape, grad=True, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad)


def _proj(rng, shape):
    # fixed random projection turns any output into a well-conditioned scalar
    return rng.standard_normal(shape)


def _scalar(out, proj):
    return T.sum(T.mul(out, proj))


def conv_brute(x, w, stride=1, padding=0, dilation=1):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for a in range(Ho):
                for b in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, c, a * stride + i * dilation, b * stride + j * dilation] * w[o, c, i, j]
                    out[n, o, a, b] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 4))
        y = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(y.data, x)

    def test_box_sum_small(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        y = T.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), padding=1)
        expected = conv_brute(x.data, np.ones((1, 1, 3, 3)), padding=1)
        np.testing.assert_allclose(expected, [[[[10.0, 10.0], [10.0, 10.0]]]])
        np.testing.assert_allclose(y.data, expected)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 1, 1), (1, 2, 2), (2, 1, 1), (1, 0, 1), (2, 2, 2), (1, 4, 4)])
    def test_matches_brute_force(self, stride, padding, dilation):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 9, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        y = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_allclose(y.data, conv_brute(x, w, stride, padding, dilation), atol=1e-12)

    def test_same_padding_keeps_size(self):
        x = Tensor(np.zeros((1, 2, 16, 8)))
        for d in (1, 2, 4, 8):
            assert T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), padding=d, dilation=d).shape == (1, 3, 16, 8)

    @pytest.mark.parametrize("shape,O,k,s,p,d", [
        ((1, 1, 5, 5), 1, 3, 1, 1, 1),
        ((2, 3, 6, 5), 2, 3, 1, 2, 2),
        ((1, 2, 7, 6), 3, 3, 2, 1, 1),
        ((2, 2, 4, 4), 2, 1, 1, 0, 1),
        ((1, 3, 8, 6), 2, 5, 1, 2, 1),
        ((1, 2, 9, 9), 2, 3, 1, 0, 3),
    ])
    def test_gradients(self, shape, O, k, s, p, d):
        rng = np.random.default_rng(hash((shape, O, k, s, p, d)) % 2**32)
        x = _t(rng, shape)
        w = _t(rng, (O, shape[1], k, k))
        b = _t(rng, (O,))
        out_shape = T.conv2d(x, w, b, stride=s, padding=p, dilation=d).shape
        proj = _proj(rng, out_shape)
        err = gradcheck(lambda x, w, b: _scalar(T.conv2d(x, w, b, stride=s, padding=p, dilation=d), proj), [x, w, b])
        assert err <= RTOL

    def test_channel_mismatch_reports_dims(self):
        with pytest.raises(T.ShapeError, match="C=2"):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestGroupNorm:
    def test_constant_input_gives_zero(self):
        y = T.group_norm(Tensor(np.full((2, 4, 3, 3), 5.0)), 2, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_group_statistics(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 8, 6, 5)) * 2.0 + 1.5
        y = T.group_norm(Tensor(x), 4, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        g = y.reshape(3, 4, -1)
        assert np.abs(g.mean(axis=2)).max() <= 1e-10
        assert np.abs(g.var(axis=2) - 1).max() <= 1e-6

    def test_groups_must_divide(self):
        with pytest.raises(T.ShapeError):
            T.group_norm(Tensor(np.zeros((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))

    @pytest.mark.parametrize("shape,groups", [((1, 2, 3, 3), 1), ((2, 4, 3, 2), 2), ((1, 6, 4, 3), 3),
                                              ((2, 8, 2, 2), 4), ((1, 4, 5, 5), 4)])
    def test_gradients(self, shape, groups):
        rng = np.random.default_rng(shape[1] * 7 + groups)
        x = _t(rng, shape)
        gain = _t(rng, (shape[1],))
        bias = _t(rng, (shape[1],))
        proj = _proj(rng, shape)
        err = gradcheck(lambda x, g, b: _scalar(T.group_norm(x, groups, g, b), proj), [x, gain, bias])
        assert err <= RTOL


def _sine_field(H, W, fx, fy):
    i = np.arange(H)[:, None]
    j = np.arange(W)[None, :]
    return np.sin(2 * np.pi * (fx * i / H + fy * j / W) + 0.3)


def _identity_weights(C, mx, my):
    wr = np.zeros((C, C, mx, my))
    for c in range(C):
        wr[c, c] = 1.0
    return Tensor(wr), Tensor(np.zeros_like(wr))


class TestSpectralConv:
    def test_pass_band_identity(self):
        H, W = 32, 16
        # y keeps signed frequencies {0, 1, -2, -1} for modes_y=4
        x = np.stack([_sine_field(H, W, 3, 1), _sine_field(H, W, 5, -2)])[None]
        wr, wi = _identity_weights(2, 8, 4)
        y = T.spectral_conv2d(Tensor(x), wr, wi, 8, 4)
        assert np.abs(y.data - x).max() <= 1e-10

    def test_stop_band_annihilation(self):
        H, W = 32, 16
        x = np.stack([_sine_field(H, W, 9, 0), _sine_field(H, W, 1, 5)])[None]
        wr, wi = _identity_weights(2, 8, 4)
        y = T.spectral_conv2d(Tensor(x), wr, wi, 8, 4)
        assert np.abs(y.data).max() <= 1e-10

    def test_modes_above_nyquist_rejected(self):
        wr, wi = _identity_weights(1, 10, 2)
        with pytest.raises(T.ShapeError):
            T.spectral_conv2d(Tensor(np.zeros((1, 1, 16, 8))), wr, wi, 10, 2)
        wr, wi = _identity_weights(1, 2, 6)
        with pytest.raises(T.ShapeError):
            T.spectral_conv2d(Tensor(np.zeros((1, 1, 16, 8))), wr, wi, 2, 6)

    @pytest.mark.parametrize("shape,O,mx,my", [((1, 1, 8, 6), 1, 3, 2), ((2, 2, 8, 8), 3, 5, 5),
                                               ((1, 3, 6, 4), 2, 4, 3), ((1, 2, 7, 5), 2, 4, 3),
                                               ((2, 1, 10, 6), 2, 2, 4)])
    def test_gradients(self, shape, O, mx, my):
        rng = np.random.default_rng(mx * 11 + my)
        x = _t(rng, shape)
        wr = _t(rng, (shape[1], O, mx, my))
        wi = _t(rng, (shape[1], O, mx, my))
        proj = _proj(rng, (shape[0], O) + shape[2:])
        err = gradcheck(lambda x, a, b: _scalar(T.spectral_conv2d(x, a, b, mx, my), proj), [x, wr, wi])
        assert err <= RTOL


class TestLosses:
    def test_huber_branches(self):
        z = Tensor(np.zeros(1))
        assert T.huber_loss(Tensor(np.ones(3)), Tensor(np.ones(3))).item() == 0.0
        assert T.huber_loss(Tensor([0.5]), z).item() == pytest.approx(0.125)
        # linear branch: delta * (|r| - delta / 2)
        assert T.huber_loss(Tensor([2.0]), z).item() == pytest.approx(1.0 * (2.0 - 0.5))

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
        with pytest.raises(T.ShapeError):
            T.huber_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    @pytest.mark.parametrize("shape", [(3,), (2, 4), (1, 2, 3, 3), (2, 3, 2, 2), (5, 1)])
    def test_gradients(self, shape):
        rng = np.random.default_rng(len(shape) * 5 + shape[0])
        a = _t(rng, shape, scale=2.0)
        b = _t(rng, shape, scale=2.0)
        # keep residuals away from the Huber kink where the derivative jumps
        r = a.data - b.data
        a.data[np.abs(np.abs(r) - 1.0) < 1e-3] += 0.01
        assert gradcheck(lambda a, b: T.huber_loss(a, b, 1.0), [a, b]) <= RTOL
        assert gradcheck(lambda a, b: T.mse_loss(a, b), [a, b]) <= RTOL


class TestSmallOps:
    @pytest.mark.parametrize("N,F,O", [(1, 3, 2), (4, 5, 3), (2, 8, 8), (3, 1, 4), (5, 6, 1)])
    def test_dense_gradients(self, N, F, O):
        rng = np.random.default_rng(N * 100 + F * 10 + O)
        x, w, b = _t(rng, (N, F)), _t(rng, (F, O)), _t(rng, (O,))
        proj = _proj(rng, (N, O))
        assert gradcheck(lambda x, w, b: _scalar(T.dense(x, w, b), proj), [x, w, b]) <= RTOL

    @pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 4, 6), (1, 2, 8, 4), (3, 1, 6, 2), (2, 2, 2, 8)])
    def test_pool_upsample_silu_gradients(self, shape):
        rng = np.random.default_rng(sum(shape))
        x = _t(rng, shape)
        p1 = _proj(rng, (shape[0], shape[1], shape[2] // 2, shape[3] // 2))
        p2 = _proj(rng, (shape[0], shape[1], shape[2] * 2, shape[3] * 2))
        p3 = _proj(rng, shape)
        assert gradcheck(lambda x: _scalar(T.avg_pool2(x), p1), [x]) <= RTOL
        assert gradcheck(lambda x: _scalar(T.nearest_upsample2(x), p2), [x]) <= RTOL
        assert gradcheck(lambda x: _scalar(T.silu(x), p3), [x]) <= RTOL

    @pytest.mark.parametrize("shape", [(1, 2, 3, 3), (2, 3, 2, 4), (1, 1, 4, 4), (3, 2, 1, 2), (2, 4, 2, 2)])
    def test_structural_gradients(self, shape):
        rng = np.random.default_rng(sum(shape) + 1)
        a, b = _t(rng, shape), _t(rng, shape)
        bias = _t(rng, shape[:2])
        pc = _proj(rng, (shape[0], 2 * shape[1]) + shape[2:])
        ps = _proj(rng, (shape[0], 1) + shape[2:])
        p = _proj(rng, shape)

        def f(a, b, bias):
            cat = T.concat_channels([T.mul(a, b), T.add_channel_bias(a, bias)])
            return T.add(_scalar(cat, pc), _scalar(T.slice_channels(T.sub(a, b), 0, 1), ps))

        assert gradcheck(f, [a, b, bias]) <= RTOL
        assert gradcheck(lambda a: _scalar(T.softmax(a, axis=1), p), [a]) <= RTOL

    def test_bmm_gradients(self):
        rng = np.random.default_rng(9)
        for B, M, K, N in [(1, 2, 3, 2), (2, 3, 3, 1), (3, 1, 4, 2), (2, 2, 2, 2), (1, 4, 1, 3)]:
            a, b = _t(rng, (B, M, K)), _t(rng, (B, K, N))
            p = _proj(rng, (B, N, M))
            assert gradcheck(lambda a, b: _scalar(T.transpose_last2(T.bmm(a, b)), p), [a, b]) <= RTOL


class TestGraph:
    def test_fan_out_accumulates_path_sum(self):
        # y = x*x + 3x through two distinct paths; dy/dx = 2x + 3
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = T.sum(T.add(T.mul(x, x), T.mul(x, 3.0)))
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 3)

    def test_each_node_visited_once(self):
        calls = []
        x = Tensor(np.array([2.0]), requires_grad=True)
        h = T.mul(x, 2.0)
        orig = h._backward

        def counting(g):
            calls.append(1)
            orig(g)

        h._backward = counting
        # h feeds two consumers; its rule must run once with the summed gradient
        y = T.sum(T.add(T.mul(h, 1.0), T.mul(h, 5.0)))
        y.backward()
        assert len(calls) == 1
        np.testing.assert_allclose(x.grad, [12.0])

    def test_leaf_data_untouched(self):
        rng = np.random.default_rng(0)
        x = _t(rng, (1, 2, 4, 4))
        before = x.data.copy()
        T.mean(T.silu(x)).backward()
        np.testing.assert_array_equal(x.data, before)
        assert x.grad.shape == x.shape

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = T.mul(x, 2.0)
        assert y.is_leaf and not y.requires_grad

    def test_forward_deterministic(self):
        rng = np.random.default_rng(4)
        x, w = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3))
        a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert np.array_equal(a, b)


class TestAdam:
    def test_zero_grads_leave_params(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        p["w"].grad = np.zeros(2)
        st = T.AdamState()
        T.adam_step(st, p)
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
        assert st.step_count == 1

    def test_first_step_is_minus_lr(self):
        p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
        p["w"].grad = np.array([1.0])
        st = T.AdamState(lr=1e-3)
        T.adam_step(st, p)
        # m_hat = v_hat = 1 after bias correction
        assert p["w"].data[0] == pytest.approx(-1e-3, rel=1e-7)
        assert p["w"].grad is None

    def test_step_count_and_buffers(self):
        p = {"w": Tensor(np.zeros((2, 3)), requires_grad=True)}
        st = T.AdamState()
        for k in range(3):
            p["w"].grad = np.ones((2, 3))
            T.adam_step(st, p)
            assert st.step_count == k + 1
        assert st.m["w"].shape == st.v["w"].shape == (2, 3)

    def test_nan_gradient_aborts(self):
        p = {"enc.w": Tensor(np.zeros(2), requires_grad=True)}
        p["enc.w"].grad = np.array([np.nan, 0.0])
        with pytest.raises(T.NonFiniteGradient, match="enc.w"):
            T.adam_step(T.AdamState(), p)

    def test_deterministic_runs(self):
        def run():
            rng = np.random.default_rng(5)
            w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
            x = rng.standard_normal((4, 3))
            st = T.AdamState(lr=1e-2)
            for _ in range(5):
                T.mean(T.mul(T.dense(Tensor(x), w), T.dense(Tensor(x), w))).backward()
                T.adam_step(st, {"w": w})
            return w.data

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ws = {"a.w": rng.standard_normal((2, 3, 3, 3)), "b": rng.standard_normal(4), "s": np.array(2.5)}
        save_weights(tmp_path / "w.acwt", ws)
        back = load_weights(tmp_path / "w.acwt")
        assert list(back) == list(ws)
        for k in ws:
            np.testing.assert_array_equal(back[k], ws[k])

    def test_layout(self, tmp_path):
        save_weights(tmp_path / "w.acwt", {"ab": np.zeros((2, 3))})
        raw = (tmp_path / "w.acwt").read_bytes()
        assert raw[:4] == b"ACWT"
        # header 12 + name-len 2 + name 2 + rank 1 + extents 8 + payload 48
        assert len(raw) == 12 + 2 + 2 + 1 + 8 + 6 * 8

    def test_bad_magic_and_truncation(self, tmp_path):
        save_weights(tmp_path / "w.acwt", {"x": np.ones(10)})
        raw = (tmp_path / "w.acwt").read_bytes()
        (tmp_path / "bad.acwt").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(CheckpointError):
            load_weights(tmp_path / "bad.acwt")
        (tmp_path / "short.acwt").write_bytes(raw[:-8])
        with pytest.raises(CheckpointError):
            load_weights(tmp_path / "short.acwt")
