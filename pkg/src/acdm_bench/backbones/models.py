"""Denoiser / predictor architectures built on the tensor engine."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

KINDS = ("unet", "resnet", "resnet-dilated", "fno")
DILATIONS = (1, 2, 4, 8, 4, 2, 1)


@dataclass
class BackboneSpec:
    kind: str = "unet"
    in_channels: int = 4
    out_channels: int = 4
    width: int = 32
    levels: int = 3
    emb_dim: int = 0          # unet step embedding; 0 disables it
    norm: bool = True         # group norm in unet blocks
    attention: bool = False   # linear attention at the unet bottleneck
    groups: int = 8
    blocks: int = 4
    layers: int = 7
    modes: tuple[int, int] = (16, 8)
    fno_layers: int = 4
    dtype: str = "float64"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; expected one of {KINDS}")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.emb_dim < 0 or self.emb_dim % 2:
            raise ValueError("emb_dim must be a non-negative even number")
        if self.kind != "unet" and self.emb_dim:
            raise ValueError(f"{self.kind} does not take a step embedding")
        if self.levels < 1 or self.blocks < 1 or self.layers < 1 or self.fno_layers < 1:
            raise ValueError("depth settings must be >= 1")
        self.modes = tuple(int(m) for m in self.modes)
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def dilations(self) -> tuple[int, ...]:
        if self.kind == "resnet-dilated":
            return DILATIONS
        return (1,) * self.layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d


def embed_diffusion_step(r, dim: int) -> np.ndarray:
    """Sinusoidal features of the step index, [sin..., cos...] with a geometric
    frequency ladder from 1 down to 1/10000. ``r`` may be a scalar or [N]."""
    if dim <= 0 or dim % 2:
        raise ValueError(f"embedding dim must be positive and even, got {dim}")
    half = dim // 2
    omega = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    arg = np.asarray(r, dtype=np.float64)[..., None] * omega
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def _groups(c: int, want: int) -> int:
    g = min(want, c)
    while c % g:
        g -= 1
    return g


class Model:
    """Parameters plus the forward wiring for one backbone."""

    def __init__(self, spec: BackboneSpec, seed: int = 0):
        self.spec = spec
        self.dtype = np.dtype(spec.dtype)
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self._skip_gates = [1.0] * spec.levels
        builder = {"unet": self._build_unet, "resnet": self._build_resnet,
                   "resnet-dilated": self._build_resnet, "fno": self._build_fno}[spec.kind]
        builder()
        del self._rng

    # -- parameter helpers ---------------------------------------------------
    def _p(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _conv(self, name: str, cin: int, cout: int, k: int = 3, scale: float = 1.0):
        std = scale / math.sqrt(cin * k * k)
        self._p(name + ".w", self._rng.standard_normal((cout, cin, k, k)) * std)
        self._p(name + ".b", np.zeros(cout))

    def _dense(self, name: str, fin: int, fout: int, scale: float = 1.0):
        self._p(name + ".w", self._rng.standard_normal((fin, fout)) * scale / math.sqrt(fin))
        self._p(name + ".b", np.zeros(fout))

    def _gn(self, name: str, c: int):
        self._p(name + ".g", np.ones(c))
        self._p(name + ".b", np.zeros(c))

    def conv(self, name: str, x: Tensor, padding: int = 1, dilation: int = 1) -> Tensor:
        return T.conv2d(x, self.params[name + ".w"], self.params[name + ".b"],
                        padding=padding, dilation=dilation)

    def gn(self, name: str, x: Tensor) -> Tensor:
        if not self.spec.norm:
            return x
        return T.group_norm(x, _groups(x.shape[1], self.spec.groups),
                            self.params[name + ".g"], self.params[name + ".b"])

    def linear(self, name: str, x: Tensor) -> Tensor:
        return T.dense(x, self.params[name + ".w"], self.params[name + ".b"])

    # -- unet ------------------------------------------------------------------
    def _block_params(self, name: str, cin: int, cout: int):
        s = self.spec
        if s.norm:
            self._gn(name + ".n1", cin)
            self._gn(name + ".n2", cout)
        self._conv(name + ".c1", cin, cout)
        self._conv(name + ".c2", cout, cout, scale=0.5)
        if s.emb_dim:
            self._dense(name + ".emb", s.emb_dim, cout)
        if cin != cout:
            self._conv(name + ".skip", cin, cout, k=1)

    def _block(self, name: str, x: Tensor, emb: Tensor | None) -> Tensor:
        h = self.conv(name + ".c1", T.silu(self.gn(name + ".n1", x)))
        if emb is not None:
            h = T.add_channel_bias(h, self.linear(name + ".emb", emb))
        h = self.conv(name + ".c2", T.silu(self.gn(name + ".n2", h)))
        skip = self.conv(name + ".skip", x, padding=0) if name + ".skip.w" in self.params else x
        return T.add(h, skip)

    def _build_unet(self):
        s, w = self.spec, self.spec.width
        if s.emb_dim:
            self._dense("temb.l1", s.emb_dim, 2 * s.emb_dim)
            self._dense("temb.l2", 2 * s.emb_dim, s.emb_dim)
        self._conv("in", s.in_channels, w)
        for lv in range(s.levels):
            self._block_params(f"down{lv}", w, w)
        self._block_params("mid", w, w)
        if s.attention:
            for n in ("q", "k", "v", "o"):
                self._conv(f"attn.{n}", w, w, k=1)
            self._gn("attn.n", w)
        for lv in reversed(range(s.levels)):
            self._block_params(f"up{lv}", 2 * w, w)
        self._gn("out.n", w)
        self._conv("out", w, s.out_channels, scale=0.1)

    def _attention(self, x: Tensor) -> Tensor:
        """Linear attention: softmax over features for queries and over
        positions for keys, so the cost is linear in the number of cells."""
        N, C, H, W = x.shape
        h = self.gn("attn.n", x)
        q = T.reshape(self.conv("attn.q", h, padding=0), (N, C, H * W))
        k = T.reshape(self.conv("attn.k", h, padding=0), (N, C, H * W))
        v = T.reshape(self.conv("attn.v", h, padding=0), (N, C, H * W))
        q = T.softmax(q, axis=1)
        k = T.softmax(k, axis=2)
        ctx = T.bmm(v, T.transpose_last2(k))        # [N, C, C]
        out = T.reshape(T.bmm(ctx, q), (N, C, H, W))
        return T.add(x, self.conv("attn.o", out, padding=0))

    def _step_embedding(self, r, n: int) -> Tensor | None:
        s = self.spec
        if not s.emb_dim:
            if r is not None:
                raise ValueError("diffusion step supplied to a backbone without step embedding")
            return None
        if r is None:
            raise ValueError("this backbone needs the diffusion step r")
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,))
        e = Tensor(embed_diffusion_step(r, s.emb_dim).astype(self.dtype))
        e = T.silu(self.linear("temb.l1", e))
        return T.silu(self.linear("temb.l2", e))

    def _forward_unet(self, x: Tensor, r) -> Tensor:
        s = self.spec
        H, W = x.shape[2:]
        f = 2 ** (s.levels - 1)
        if H % f or W % f:
            raise ValueError(f"unet with {s.levels} levels needs H, W divisible by {f}; got {(H, W)}")
        emb = self._step_embedding(r, x.shape[0])
        h = self.conv("in", x)
        skips = []
        for lv in range(s.levels):
            if lv:
                h = T.avg_pool2(h)
            h = self._block(f"down{lv}", h, emb)
            skips.append(h)
        h = self._block("mid", h, emb)
        if s.attention:
            h = self._attention(h)
        for lv in reversed(range(s.levels)):
            if lv < s.levels - 1:
                h = T.nearest_upsample2(h)
            sk = skips[lv]
            if self._skip_gates[lv] != 1.0:
                sk = T.mul(sk, self._skip_gates[lv])
            h = self._block(f"up{lv}", T.concat_channels([h, sk]), emb)
        return self.conv("out", T.silu(self.gn("out.n", h)))

    # -- resnet ----------------------------------------------------------------
    def _build_resnet(self):
        s, w = self.spec, self.spec.width
        self._conv("in", s.in_channels, w)
        for b in range(s.blocks):
            for i in range(len(s.dilations)):
                self._conv(f"b{b}.c{i}", w, w, scale=math.sqrt(2.0) if i < len(s.dilations) - 1 else 0.5)
        self._conv("out", w, s.out_channels, scale=0.1)

    def resnet_block(self, b: int, h: Tensor) -> Tensor:
        """One residual block: a stack of (dilated) convolutions with ReLU."""
        dil = self.spec.dilations
        y = h
        for i, d in enumerate(dil):
            y = self.conv(f"b{b}.c{i}", y, padding=d, dilation=d)
            if i < len(dil) - 1:
                y = T.relu(y)
        return T.add(h, y)

    def _forward_resnet(self, x: Tensor, r) -> Tensor:
        if r is not None:
            raise ValueError(f"{self.spec.kind} does not take a diffusion step")
        h = self.conv("in", x)
        for b in range(self.spec.blocks):
            h = self.resnet_block(b, h)
        return self.conv("out", h)

    # -- fno -------------------------------------------------------------------
    def _build_fno(self):
        s, w = self.spec, self.spec.width
        mx, my = s.modes
        self._conv("lift", s.in_channels, w, k=1)
        for i in range(s.fno_layers):
            std = 1.0 / (w * math.sqrt(2.0))
            self._p(f"f{i}.wr", self._rng.standard_normal((w, w, mx, my)) * std)
            self._p(f"f{i}.wi", self._rng.standard_normal((w, w, mx, my)) * std)
            self._conv(f"f{i}.lin", w, w, k=1)
        self._conv("proj1", w, 2 * w, k=1)
        self._conv("proj2", 2 * w, s.out_channels, k=1, scale=0.1)

    def _forward_fno(self, x: Tensor, r) -> Tensor:
        if r is not None:
            raise ValueError("fno does not take a diffusion step")
        s = self.spec
        h = self.conv("lift", x, padding=0)
        for i in range(s.fno_layers):
            sp = T.spectral_conv2d(h, self.params[f"f{i}.wr"], self.params[f"f{i}.wi"], *s.modes)
            h = T.add(sp, self.conv(f"f{i}.lin", h, padding=0))
            if i < s.fno_layers - 1:
                h = T.silu(h)
        return self.conv("proj2", T.silu(self.conv("proj1", h, padding=0)), padding=0)

    # -- public ----------------------------------------------------------------
    def __call__(self, x, r=None) -> Tensor:
        return forward(self, x, r)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, weights: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(weights)
        extra = set(weights) - set(self.params)
        if missing or extra:
            raise KeyError(f"weight mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in weights.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    def copy(self) -> "Model":
        m = Model.__new__(Model)
        m.spec, m.dtype = self.spec, self.dtype
        m._skip_gates = list(self._skip_gates)
        m.params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return m


def build(spec: BackboneSpec, seed: int = 0) -> Model:
    return Model(spec, seed)


def forward(model: Model, x, r=None) -> Tensor:
    """Run the backbone on x [N, Cin, H, W]; ``r`` is the diffusion step
    (scalar or [N]) for embedding-enabled U-Nets and must be None otherwise."""
    s = model.spec
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.dtype))
    if x.data.ndim != 4 or x.shape[1] != s.in_channels:
        raise ValueError(f"{s.kind}: expected input [N, {s.in_channels}, H, W], got {x.shape}")
    if x.dtype != model.dtype:
        x = Tensor(x.data.astype(model.dtype), requires_grad=False) if not x.requires_grad else x
    fn = {"unet": model._forward_unet, "resnet": model._forward_resnet,
          "resnet-dilated": model._forward_resnet, "fno": model._forward_fno}[s.kind]
    return fn(x, r)


def param_count(model: Model) -> int:
    return int(sum(p.size for p in model.params.values()))


def spec_param_count(spec: BackboneSpec) -> int:
    return param_count(Model(spec))


def autoscale_width(spec: BackboneSpec, target: int, tol: float = 0.2, max_width: int = 512) -> BackboneSpec:
    """Copy of ``spec`` with the width whose parameter count is closest to ``target``."""
    from dataclasses import replace

    best, best_err = None, math.inf
    for w in range(1, max_width + 1):
        cand = replace(spec, width=w)
        n = spec_param_count(cand)
        err = abs(n - target) / target
        if err < best_err:
            best, best_err = cand, err
        if n > target * (1 + tol):
            break
    if best_err > tol:
        raise ValueError(f"no width within {tol:.0%} of {target} parameters")
    return best
