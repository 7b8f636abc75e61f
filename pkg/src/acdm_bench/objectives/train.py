from __future__ import annotations

import logging
import math

import numpy as np

from .. import tensor as T
from ..data.windows import WindowSampler
from .losses import (
    ObjectiveConfig,
    acdm_train_step,
    make_schedule,
    nextstep_train_step,
    noisy_train_step,
    refiner_train_step,
    unrolled_train_step,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"non-finite value at optimizer step {step}: {detail}")
        self.step = step


def objective_loss(model, cfg: ObjectiveConfig, cond, targets, rng, mask=None,
                   n_fields: int | None = None, schedule=None, unroll: bool = True):
    """Dispatch one batch to the configured objective."""
    v = cfg.variant
    if v in ("acdm", "acdm-ncn"):
        schedule = schedule or make_schedule(cfg.R)
        return acdm_train_step(model, cond, targets[:, 0], schedule, rng,
                               noise_conditioning=(v == "acdm"), delta=cfg.delta, loss=cfg.loss)
    if v == "next-step" or (v == "unrolled" and not unroll):
        return nextstep_train_step(model, cond, targets[:, 0], mask, n_fields)
    if v == "unrolled":
        return unrolled_train_step(model, cond, targets, cfg.m, mask, n_fields)
    if v == "train-noise":
        return noisy_train_step(model, cond, targets[:, 0], cfg.n, rng, mask, n_fields)
    if v == "refiner":
        return refiner_train_step(model, cond, targets[:, 0], cfg.R, cfg.sigma_min, rng, mask, n_fields)
    raise ValueError(v)


def lr_at(step: int, total: int, lr: float, schedule: str = "constant", final_frac: float = 0.1) -> float:
    if schedule == "constant":
        return lr
    if schedule == "cosine":
        frac = step / max(total - 1, 1)
        return lr * (final_frac + (1 - final_frac) * 0.5 * (1 + math.cos(math.pi * frac)))
    raise ValueError(f"unknown lr schedule {schedule!r}")


def train(model, cfg: ObjectiveConfig, trajs, steps: int, batch_size: int = 8, lr: float = 1e-4,
          seed: int = 0, masks=None, stride: int = 1, seq_len: int = 16, n_fields: int | None = 3,
          lr_schedule: str = "constant", on_step=None) -> list[float]:
    """Optimise ``model`` in place with Adam; returns the loss per step.

    Data order and all noise draws derive from ``seed``. ``on_step(step,
    loss)`` is called after every update.
    """
    data_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    data_rng = np.random.default_rng(data_ss)
    noise_rng = np.random.default_rng(noise_ss)
    sampler = WindowSampler(trajs, cfg.k, cfg.targets, stride, seq_len, masks)
    batches = sampler.batches(batch_size, data_rng)
    schedule = make_schedule(cfg.R) if cfg.diffusion else None
    opt = T.AdamState(lr=lr)
    losses = []
    for step in range(steps):
        cond, targets, mask = next(batches)
        unroll = not (cfg.variant == "unrolled" and step < cfg.pretrain_steps)
        loss = objective_loss(model, cfg, cond, targets, noise_rng, mask, n_fields, schedule, unroll)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(step, f"loss {value}")
        T.backward(loss)
        try:
            T.adam_step(opt, model.params, lr_at(step, steps, lr, lr_schedule))
        except T.NonFiniteGradient as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return losses
