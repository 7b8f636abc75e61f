"""Differentiable operations on :class:`Tensor`.

Every op takes and returns Tensors (plain numpy arrays and Python scalars are
accepted where a constant operand makes sense) and records a backward closure
via :func:`make_node`. Shapes are strict: apart from constant masks and
per-channel biases there is no implicit broadcasting.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor, make_node


class ShapeError(ValueError):
    """Raised when operand extents do not fit an op's contract."""


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        if c.ndim and np.broadcast_shapes(c.shape, a.shape) != a.shape:
            raise ShapeError(f"add: constant {c.shape} does not fit {a.shape}")
        return make_node(a.data + c, (a,), lambda g: a.accumulate(g), "add_const")
    _check_same(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -np.asarray(b))
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a constant array (e.g. a mask) or scalar."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        if c.ndim and np.broadcast_shapes(c.shape, a.shape) != a.shape:
            raise ShapeError(f"mul: constant {c.shape} does not fit {a.shape}")
        return make_node(a.data * c, (a,), lambda g: a.accumulate(g * c), "mul_const")
    _check_same(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return make_node(a.data * b.data, (a, b), bw, "mul")


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def bw(g):
        x.accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return make_node(out, (x,), bw, "silu")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_node(np.where(pos, x.data, 0.0), (x,), lambda g: x.accumulate(g * pos), "relu")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[N,C,H,W] + b[N,C] (per-sample) or b[C] (shared)."""
    N, C = x.shape[:2]
    if b.shape not in ((N, C), (C,)):
        raise ShapeError(f"add_channel_bias: bias {b.shape} does not fit {x.shape}")
    bb = b.data.reshape((N if b.data.ndim == 2 else 1), C, 1, 1)

    def bw(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            s = g.sum(axis=(2, 3))
            b.accumulate(s if b.data.ndim == 2 else s.sum(axis=0))

    return make_node(x.data + bb, (x, b), bw, "add_channel_bias")


# ---------------------------------------------------------------------------
# structure


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,),
                     lambda g: x.accumulate(g.reshape(x.shape)), "reshape")


def transpose_last2(x: Tensor) -> Tensor:
    return make_node(np.swapaxes(x.data, -1, -2), (x,),
                     lambda g: x.accumulate(np.swapaxes(g, -1, -2)), "transpose")


def concat_channels(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {x.shape} incompatible with {ref}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                x.accumulate(g[:, lo:hi])

    return make_node(np.concatenate([x.data for x in xs], axis=1), tuple(xs), bw, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x.accumulate(full)

    return make_node(x.data[:, start:stop].copy(), (x,), bw, "slice_channels")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.asarray(x.data.sum()), (x,),
                     lambda g: x.accumulate(np.broadcast_to(g, x.shape)), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_node(np.asarray(x.data.mean()), (x,),
                     lambda g: x.accumulate(np.broadcast_to(g / n, x.shape)), "mean")


# ---------------------------------------------------------------------------
# dense layers


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[N,F] @ w[F,O] (+ b[O])."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} vs weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return make_node(out, parents, bw, "dense")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul a[B,M,K] @ b[B,K,N]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ np.swapaxes(b.data, 1, 2))
        if b.requires_grad:
            b.accumulate(np.swapaxes(a.data, 1, 2) @ g)

    return make_node(a.data @ b.data, (a, b), bw, "bmm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x.accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return make_node(s, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, Ho: int, Wo: int) -> np.ndarray:
    """Patches of a padded NCHW array as [N, C*kh*kw, Ho*Wo]."""
    N, C = xp.shape[:2]
    if kh == 1 and kw == 1 and stride == 1:
        return xp[:, :, :Ho, :Wo].reshape(N, C, Ho * Wo)
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation][:, :, :Ho, :Wo]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(N, C * kh * kw, Ho * Wo)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2D cross-correlation of x[N,C,H,W] with w[O,C,kh,kw] (zero padding)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4D input/kernel, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, Ck, kh, kw = w.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has C={C} channels, kernel expects {Ck} "
                         f"(input {x.shape}, kernel {w.shape})")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs O={O}")
    s, p, d = stride, padding, dilation
    eh, ew = d * (kh - 1) + 1, d * (kw - 1) + 1
    Ho = (H + 2 * p - eh) // s + 1
    Wo = (W + 2 * p - ew) // s + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: kernel extent {(eh, ew)} exceeds padded input {(H + 2 * p, W + 2 * p)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, kh, kw, s, d, Ho, Wo)
    wmat = w.data.reshape(O, -1)
    out = np.matmul(wmat, cols).reshape(N, O, Ho, Wo)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gm = g.reshape(N, O, Ho * Wo)
        if w.requires_grad:
            w.accumulate(np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        q = d * (kh - 1) - p
        if s == 1 and q >= 0 and d * (kw - 1) - p == q and kh == kw:
            # input gradient as a correlation of the padded output gradient
            # with the spatially flipped, channel-transposed kernel
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
            wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
            gcols = _im2col(gp, kh, kw, 1, d, H, W)
            x.accumulate(np.matmul(wf, gcols).reshape(N, C, H, W))
            return
        dcols = np.matmul(wmat.T, gm).reshape(N, C, kh, kw, Ho, Wo)
        dxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                hs, ws = i * d, j * d
                dxp[:, :, hs:hs + s * (Ho - 1) + 1:s, ws:ws + s * (Wo - 1) + 1:s] += dcols[:, :, i, j]
        x.accumulate(dxp[:, :, p:p + H, p:p + W] if p else dxp)

    return make_node(out, parents, bw, "conv2d")


def group_norm(x: Tensor, groups: int, gain: Tensor, bias: Tensor, eps: float = 1e-7) -> Tensor:
    N, C, H, W = x.shape
    if groups <= 0 or C % groups:
        raise ShapeError(f"group_norm: {groups} groups do not divide C={C}")
    if gain.shape != (C,) or bias.shape != (C,):
        raise ShapeError(f"group_norm: gain/bias must be ({C},)")
    xr = x.data.reshape(N, groups, -1)
    mu = xr.mean(axis=2, keepdims=True)
    xc = xr - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    out = xhat * gain.data.reshape(1, C, 1, 1) + bias.data.reshape(1, C, 1, 1)

    def bw(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxh = (g * gain.data.reshape(1, C, 1, 1)).reshape(N, groups, -1)
            xh = xhat.reshape(N, groups, -1)
            dx = inv * (dxh - dxh.mean(axis=2, keepdims=True)
                        - xh * (dxh * xh).mean(axis=2, keepdims=True))
            x.accumulate(dx.reshape(x.shape))

    return make_node(out, (x, gain, bias), bw, "group_norm")


def avg_pool2(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2: spatial dims {(H, W)} must be even")
    out = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        x.accumulate(np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3))

    return make_node(out, (x,), bw, "avg_pool2")


def nearest_upsample2(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        x.accumulate(g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)))

    return make_node(out, (x,), bw, "upsample2")


# ---------------------------------------------------------------------------
# spectral convolution


def spectral_modes(H: int, W: int, modes_x: int, modes_y: int):
    """Validate mode counts and return the retained index sets.

    The real FFT runs along the first spatial axis (x, extent H), so x keeps
    the lowest ``modes_x`` non-negative frequencies. The second axis uses a
    full FFT; y keeps ``modes_y`` signed frequencies, the non-negative half
    first.
    """
    if modes_x < 1 or modes_y < 1:
        raise ShapeError("spectral_conv2d: mode counts must be positive")
    if modes_x > H // 2 + 1:
        raise ShapeError(f"spectral_conv2d: modes_x={modes_x} exceeds Nyquist limit {H // 2 + 1} for H={H}")
    if modes_y > W // 2 + 1:
        raise ShapeError(f"spectral_conv2d: modes_y={modes_y} exceeds Nyquist limit {W // 2 + 1} for W={W}")
    npos = modes_y - modes_y // 2
    ky = np.concatenate([np.arange(npos), np.arange(W - modes_y // 2, W)])
    return np.arange(modes_x), ky


def spectral_conv2d(x: Tensor, w_re: Tensor, w_im: Tensor, modes_x: int, modes_y: int) -> Tensor:
    """FFT -> truncate -> complex channel mixing -> inverse FFT.

    ``w_re``/``w_im`` hold the real and imaginary parts of the complex
    weights, each [C_in, C_out, modes_x, modes_y].
    """
    N, C, H, W = x.shape
    kx, ky = spectral_modes(H, W, modes_x, modes_y)
    if w_re.shape != w_im.shape or w_re.shape[0] != C or w_re.shape[2:] != (modes_x, modes_y):
        raise ShapeError(f"spectral_conv2d: weights {w_re.shape} do not fit input {x.shape} "
                         f"with modes {(modes_x, modes_y)}")
    O = w_re.shape[1]
    Hr = H // 2 + 1
    wc = w_re.data + 1j * w_im.data
    X = np.fft.rfftn(x.data, axes=(3, 2))[:, :, :modes_x][:, :, :, ky]
    Z = np.einsum("ncxy,coxy->noxy", X, wc)
    Y = np.zeros((N, O, Hr, W), dtype=np.complex128)
    Y[:, :, :modes_x, ky] = Z
    out = np.fft.irfftn(Y, s=(W, H), axes=(3, 2)).astype(x.dtype, copy=False)

    # Hermitian weighting of the real-FFT axis
    herm = np.full(Hr, 2.0)
    herm[0] = 1.0
    if H % 2 == 0:
        herm[-1] = 1.0
    herm_k = herm[:modes_x].reshape(1, 1, modes_x, 1)

    def bw(g):
        G = np.fft.rfftn(g, axes=(3, 2))[:, :, :modes_x][:, :, :, ky]
        GZ = G * herm_k / (H * W)
        if w_re.requires_grad or w_im.requires_grad:
            GW = np.einsum("ncxy,noxy->coxy", np.conj(X), GZ)
            if w_re.requires_grad:
                w_re.accumulate(GW.real)
            if w_im.requires_grad:
                w_im.accumulate(GW.imag)
        if x.requires_grad:
            GX = np.einsum("noxy,coxy->ncxy", GZ, np.conj(wc))
            full = np.zeros((N, C, Hr, W), dtype=np.complex128)
            full[:, :, :modes_x, ky] = GX / herm_k
            x.accumulate(H * W * np.fft.irfftn(full, s=(W, H), axes=(3, 2)))

    return make_node(out, (x, w_re, w_im), bw, "spectral_conv2d")


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    _check_same(pred, target, "mse_loss")
    r = pred.data - target.data
    n = r.size

    def bw(g):
        if pred.requires_grad:
            pred.accumulate(g * (2.0 / n) * r)
        if target.requires_grad:
            target.accumulate(-g * (2.0 / n) * r)

    return make_node(np.asarray((r * r).mean()), (pred, target), bw, "mse_loss")


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: r^2/2 for |r| <= delta, delta*(|r| - delta/2) above."""
    target = as_tensor(target)
    _check_same(pred, target, "huber_loss")
    if delta <= 0:
        raise ValueError("huber_loss: delta must be positive")
    r = pred.data - target.data
    a = np.abs(r)
    quad = a <= delta
    val = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    n = r.size

    def bw(g):
        d = np.where(quad, r, delta * np.sign(r)) * (g / n)
        if pred.requires_grad:
            pred.accumulate(d)
        if target.requires_grad:
            target.accumulate(-d)

    return make_node(np.asarray(val.mean()), (pred, target), bw, "huber_loss")
