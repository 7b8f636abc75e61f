"""Training objectives: conditional diffusion, next-step, unrolled, training
noise and the refiner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

VARIANTS = ("acdm", "acdm-ncn", "next-step", "unrolled", "train-noise", "refiner")


# ---------------------------------------------------------------------------
# diffusion schedule


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear variance schedule. ``betas[r-1]`` is beta_r for r = 1..R;
    ``alpha_bars[r]`` is the cumulative product with ``alpha_bars[0] == 1``."""

    R: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def beta(self, r):
        return self.betas[np.asarray(r) - 1]

    def alpha(self, r):
        return self.alphas[np.asarray(r) - 1]

    def alpha_bar(self, r):
        return self.alpha_bars[np.asarray(r)]


def make_schedule(R: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  clip_max: float | None = None) -> DiffusionSchedule:
    """Linear schedule with endpoints scaled by 500/R.

    With the default endpoints the last beta reaches 1 at R = 10, so smaller
    step counts are rejected unless ``clip_max`` caps the betas (values above
    it are clipped, e.g. ``clip_max=0.999``).
    """
    if R < 2:
        raise ValueError("need at least 2 diffusion steps")
    scale = 500.0 / R
    b1, bR = beta_start * scale, beta_end * scale
    betas = np.linspace(b1, bR, R)
    if clip_max is not None:
        if not 0.0 < clip_max < 1.0:
            raise ValueError("clip_max must lie in (0, 1)")
        betas = np.minimum(betas, clip_max)
    if betas[-1] >= 1.0:
        raise ValueError(f"R={R} gives beta_R={bR:g} >= 1; use R >= 11 or set clip_max")
    if np.any(np.diff(betas) <= 0) and clip_max is None:
        raise ValueError("schedule must be strictly increasing")
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return DiffusionSchedule(R, betas, alphas, alpha_bars)


def _per_sample(v: np.ndarray, ndim: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def forward_diffuse(x0, r, eps, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form marginal: sqrt(abar_r) x0 + sqrt(1 - abar_r) eps.

    ``r`` is a scalar or one step per leading (batch) entry of ``x0``.
    """
    r = np.asarray(r)
    if np.any(r < 0) or np.any(r > schedule.R):
        raise ValueError(f"diffusion step {r} outside [0, {schedule.R}]")
    x0 = np.asarray(x0, dtype=np.float64)
    ab = _per_sample(schedule.alpha_bars[r], x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ObjectiveConfig:
    variant: str = "acdm"
    k: int = 2
    loss: str = "huber"
    delta: float = 1.0
    R: int = 20
    m: int = 8
    n: float = 1e-2
    sigma_min: float = 1e-6
    pretrain_steps: int = 0   # unrolled only: plain next-step steps before unrolling

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown objective variant {self.variant!r}; expected one of {VARIANTS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.loss not in ("huber", "mse"):
            raise ValueError("loss must be 'huber' or 'mse'")
        if self.variant == "unrolled" and self.m < 2:
            raise ValueError("unrolled training needs m >= 2")
        if self.variant == "train-noise" and not self.n > 0:
            raise ValueError("training noise n must be > 0")
        if self.variant == "refiner":
            check_sigma_min(self.sigma_min)
            if self.R < 0:
                raise ValueError("refiner steps must be >= 0")
        if self.variant in ("acdm", "acdm-ncn"):
            make_schedule(self.R)

    @property
    def diffusion(self) -> bool:
        return self.variant in ("acdm", "acdm-ncn")

    @property
    def targets(self) -> int:
        return self.m if self.variant == "unrolled" else 1


def check_sigma_min(sigma_min: float) -> None:
    if not 0.0 < sigma_min < 1.0:
        raise ValueError(f"sigma_min must lie in (0, 1), got {sigma_min}")


# ---------------------------------------------------------------------------
# helpers


def _flatten_cond(cond: np.ndarray) -> np.ndarray:
    """[B, k, C, H, W] -> [B, k*C, H, W]."""
    B, k, C, H, W = cond.shape
    return cond.reshape(B, k * C, H, W)


def _loss_mask(mask, shape, n_fields: int | None):
    """Full-channel multiplicative mask for [B, C, H, W] or None."""
    if mask is None:
        return None
    B, C, H, W = shape
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), (B, H, W))
    full = np.ones(shape)
    nf = C if n_fields is None else n_fields
    full[:, :nf] = m[:, None]
    return full


def _masked(x: Tensor, full_mask) -> Tensor:
    return x if full_mask is None else T.mul(x, full_mask)


def _d_part(pred: Tensor, C: int) -> Tensor:
    """Keep the target-slot channels of a model output. A model may also
    predict the conditioning slot; that part is discarded."""
    if pred.shape[1] == C:
        return pred
    return T.slice_channels(pred, pred.shape[1] - C, pred.shape[1])


def _tensor(x, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# objectives


def acdm_train_step(model, cond, target, schedule: DiffusionSchedule, rng: np.random.Generator,
                    noise_conditioning: bool = True, delta: float = 1.0, loss: str = "huber") -> Tensor:
    """Denoising loss for one batch.

    ``cond`` is [B, k, C, H, W], ``target`` [B, C, H, W]. A step r is drawn
    uniformly from 1..R per sample; the target (and, unless disabled, the
    conditioning) is noised in closed form; the model sees the channel
    concatenation plus r and is scored on the target-slot noise only.
    Random draws happen in the order r, target noise, conditioning noise.
    """
    B = cond.shape[0]
    C = target.shape[1]
    c0 = _flatten_cond(cond)
    r = rng.integers(1, schedule.R + 1, size=B)
    eps_d = rng.standard_normal(target.shape)
    d_r = forward_diffuse(target, r, eps_d, schedule)
    if noise_conditioning:
        c_r = forward_diffuse(c0, r, rng.standard_normal(c0.shape), schedule)
    else:
        c_r = c0
    x = _tensor(np.concatenate([c_r, d_r], axis=1))
    pred = _d_part(model(x, r), C)
    eps_t = Tensor(eps_d.astype(pred.dtype))
    if loss == "mse":
        return T.mse_loss(pred, eps_t)
    return T.huber_loss(pred, eps_t, delta)


def nextstep_train_step(model, cond, target, mask=None, n_fields: int | None = None) -> Tensor:
    """MSE between the one-step prediction and the next state (masked)."""
    pred = model(_tensor(_flatten_cond(cond)), None)
    fm = _loss_mask(mask, target.shape, n_fields)
    return T.mse_loss(_masked(pred, fm), _masked(_tensor(target, pred.dtype), fm))


def unrolled_train_step(model, cond, targets, m: int, mask=None, n_fields: int | None = None,
                        return_steps: bool = False):
    """Autoregressive m-step rollout inside the graph; mean of per-step MSEs.

    ``targets`` is [B, M, C, H, W] with M >= m. Predicted parameter channels
    (those after ``n_fields``) are replaced by the known target values before
    being fed back, as during inference.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if targets.shape[1] < m:
        raise ValueError(f"window holds {targets.shape[1]} targets, unroll needs {m}")
    B, k, C, H, W = cond.shape
    history = [_tensor(cond[:, i]) for i in range(k)]
    fm = _loss_mask(mask, (B, C, H, W), n_fields)
    losses = []
    for j in range(m):
        pred = model(T.concat_channels(history[-k:]), None)
        tgt = targets[:, j]
        losses.append(T.mse_loss(_masked(pred, fm), _masked(_tensor(tgt, pred.dtype), fm)))
        nxt = pred
        if n_fields is not None and n_fields < C:
            nxt = T.concat_channels([T.slice_channels(pred, 0, n_fields),
                                     _tensor(tgt[:, n_fields:], pred.dtype)])
        history.append(nxt)
    total = losses[0]
    for l_ in losses[1:]:
        total = T.add(total, l_)
    total = T.mul(total, 1.0 / m)
    return (total, losses) if return_steps else total


def perturb_inputs(cond: np.ndarray, n: float, rng: np.random.Generator) -> np.ndarray:
    """Conditioning states plus N(0, n^2) noise. Always draws, even for n = 0."""
    return cond + n * rng.standard_normal(cond.shape)


def noisy_train_step(model, cond, target, n: float, rng: np.random.Generator, mask=None,
                     n_fields: int | None = None) -> Tensor:
    """Next-step MSE on noise-perturbed inputs; the target stays clean."""
    if n < 0:
        raise ValueError("noise level must be >= 0")
    return nextstep_train_step(model, perturb_inputs(cond, n, rng), target, mask, n_fields)


def refiner_variances(R: int, sigma_min: float) -> np.ndarray:
    """Noise variance per refinement step r = 0..R-1.

    ``sigma_min`` is the smallest variance, reached at r = 0; step r uses
    ``sigma_min ** ((R - r) / R)``, so the first refinement round (r = R-1)
    has variance ``sigma_min ** (1/R)``.
    """
    check_sigma_min(sigma_min)
    if R < 0:
        raise ValueError("R must be >= 0")
    r = np.arange(R)
    return sigma_min ** ((R - r) / R) if R else np.zeros(0)


def refiner_train_step(model, cond, target, R: int, sigma_min: float, rng: np.random.Generator,
                       mask=None, n_fields: int | None = None) -> Tensor:
    """One refiner step: r uniform in 0..R (shared by the batch). r = R trains the
    plain prediction with a zeroed target slot; r < R trains noise prediction
    at the variance of step r."""
    var = refiner_variances(R, sigma_min)
    B = cond.shape[0]
    c0 = _flatten_cond(cond)
    r = int(rng.integers(0, R + 1))
    rr = np.full(B, r)
    if r == R:
        x = np.concatenate([c0, np.zeros_like(target)], axis=1)
        pred = _d_part(model(_tensor(x), rr), target.shape[1])
        fm = _loss_mask(mask, target.shape, n_fields)
        return T.mse_loss(_masked(pred, fm), _masked(_tensor(target, pred.dtype), fm))
    eps = rng.standard_normal(target.shape)
    noisy = target + np.sqrt(var[r]) * eps
    pred = _d_part(model(_tensor(np.concatenate([c0, noisy], axis=1)), rr), target.shape[1])
    return T.mse_loss(pred, _tensor(eps, pred.dtype))
