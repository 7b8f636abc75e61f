"""Reverse diffusion, refinement and autoregressive rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..data.trajectory import Trajectory
from ..data.windows import expand_params
from ..objectives.losses import (
    DiffusionSchedule,
    check_sigma_min,
    forward_diffuse,
    make_schedule,
    refiner_variances,
)

DETERMINISTIC = ("next-step", "unrolled", "train-noise")
STOCHASTIC = ("acdm", "acdm-ncn", "refiner")


@dataclass
class RolloutConfig:
    horizon: int = 20
    k: int = 2
    variant: str = "acdm"
    R: int = 20
    sigma_min: float = 1e-6
    ensemble_size: int = 1
    seed: int = 0
    schedule_clip: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.variant not in DETERMINISTIC + STOCHASTIC:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "refiner":
            check_sigma_min(self.sigma_min)

    @property
    def deterministic(self) -> bool:
        return self.variant in DETERMINISTIC

    def schedule(self) -> DiffusionSchedule:
        return make_schedule(self.R, clip_max=self.schedule_clip)


def _call(model, x: np.ndarray, r) -> np.ndarray:
    with T.no_grad():
        out = model(x, r)
    return out.data if isinstance(out, T.Tensor) else np.asarray(out)


def _normal(rng, shape) -> np.ndarray:
    """Standard normal draws; with a list of generators, one per batch entry."""
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError(f"{len(rng)} generators for batch of {shape[0]}")
        return np.stack([g.standard_normal(shape[1:]) for g in rng])
    return rng.standard_normal(shape)


def _d_slot(out: np.ndarray, C: int) -> np.ndarray:
    return out if out.shape[1] == C else out[:, out.shape[1] - C:]


def reverse_step(model, x_r: np.ndarray, r: int, schedule: DiffusionSchedule, rng,
                 d_channels: int | None = None) -> np.ndarray:
    """One ancestral step d_r -> d_{r-1}.

    ``x_r`` is the channel concatenation (c_r, d_r); the last ``d_channels``
    channels (all, if None) form d_r. The variance is fixed to beta_r and no
    noise is drawn at r = 1.
    """
    if r < 1 or r > schedule.R:
        raise ValueError(f"reverse step r={r} outside [1, {schedule.R}]")
    x_r = np.asarray(x_r, dtype=np.float64)
    C = x_r.shape[1] if d_channels is None else d_channels
    d_r = x_r[:, x_r.shape[1] - C:]
    eps = _d_slot(_call(model, x_r, np.full(x_r.shape[0], r)), C)
    beta = schedule.beta(r)
    mean = (d_r - beta / np.sqrt(1.0 - schedule.alpha_bar(r)) * eps) / np.sqrt(schedule.alpha(r))
    if r > 1:
        mean = mean + np.sqrt(beta) * _normal(rng, d_r.shape)
    return mean


def _finish(state: np.ndarray, params, n_fields: int, mask) -> np.ndarray:
    """Overwrite parameter channels with known values and zero the obstacle."""
    out = state.copy()
    B, C, H, W = out.shape
    if params is not None and n_fields < C:
        out[:, n_fields:] = expand_params(np.broadcast_to(params, (B, C - n_fields)), H, W)
    if mask is not None:
        out[:, :n_fields] *= mask
    return out


def acdm_predict_step(model, prev: np.ndarray, params, schedule: DiffusionSchedule, rng,
                      ncn: bool = False, n_fields: int = 3, mask=None) -> np.ndarray:
    """Sample the next state by running the full reverse chain r = R..1.

    ``prev`` is [B, k, C, H, W]; ``params`` the known parameter channel values
    ([B, P] or [P]) for the new state. The conditioning is re-noised to level
    r at every step with fresh noise, or kept clean when ``ncn``.
    """
    B, k, C, H, W = prev.shape
    c0 = prev.reshape(B, k * C, H, W)
    d = _normal(rng, (B, C, H, W))
    for r in range(schedule.R, 0, -1):
        c = c0 if ncn else forward_diffuse(c0, r, _normal(rng, c0.shape), schedule)
        d = reverse_step(model, np.concatenate([c, d], axis=1), r, schedule, rng, C)
    return _finish(d, params, n_fields, mask)


def nextstep_predict_step(model, prev: np.ndarray, params, n_fields: int = 3, mask=None) -> np.ndarray:
    B, k, C, H, W = prev.shape
    out = _call(model, prev.reshape(B, k * C, H, W), None)
    return _finish(out, params, n_fields, mask)


def refiner_predict_step(model, prev: np.ndarray, params, R: int, sigma_min: float, rng,
                         n_fields: int = 3, mask=None) -> np.ndarray:
    """Initial prediction (zeroed target slot, step R) followed by R rounds of
    noising at decreasing variance and removing the predicted noise."""
    var = refiner_variances(R, sigma_min)
    B, k, C, H, W = prev.shape
    c0 = prev.reshape(B, k * C, H, W)
    steps = np.full(B, R)
    u = _d_slot(_call(model, np.concatenate([c0, np.zeros((B, C, H, W))], axis=1), steps), C)
    for r in range(R - 1, -1, -1):
        s = np.sqrt(var[r])
        noisy = u + s * _normal(rng, u.shape)
        eps = _d_slot(_call(model, np.concatenate([c0, noisy], axis=1), np.full(B, r)), C)
        u = noisy - s * eps
    return _finish(u, params, n_fields, mask)


def predict_step(model, prev, params, cfg: RolloutConfig, rng, schedule=None, n_fields: int = 3,
                 mask=None) -> np.ndarray:
    if cfg.variant in ("acdm", "acdm-ncn"):
        return acdm_predict_step(model, prev, params, schedule or cfg.schedule(), rng,
                                 ncn=cfg.variant == "acdm-ncn", n_fields=n_fields, mask=mask)
    if cfg.variant == "refiner":
        return refiner_predict_step(model, prev, params, cfg.R, cfg.sigma_min, rng, n_fields, mask)
    return nextstep_predict_step(model, prev, params, n_fields, mask)


def rollout_states(model, initial: np.ndarray, cfg: RolloutConfig, param_series=None,
                   n_fields: int = 3, mask=None, rng=None, schedule=None) -> np.ndarray:
    """Autoregressive rollout.

    ``initial`` is [k, C, H, W] (single run) or [B, k, C, H, W] (batched
    members). ``param_series`` holds the known parameter channel values for
    each predicted step ([horizon, P], or [B, horizon, P]); by default the
    last initial state's values are held. Returns the k initial states
    followed by ``horizon`` predictions along axis 0 (axis 1 when batched).
    """
    single = initial.ndim == 4
    x = initial[None] if single else initial
    B, k, C, H, W = x.shape
    if k != cfg.k:
        raise ValueError(f"rollout expects {cfg.k} initial states, got {k}")
    P = C - n_fields
    if param_series is None:
        param_series = np.broadcast_to(x[:, -1, n_fields:, 0, 0][:, None], (B, cfg.horizon, P))
    else:
        param_series = np.asarray(param_series, dtype=np.float64)
        if param_series.ndim == 2:
            param_series = np.broadcast_to(param_series[None], (B,) + param_series.shape)
        if param_series.shape[1] < cfg.horizon:
            raise ValueError(f"parameter series covers {param_series.shape[1]} of {cfg.horizon} steps")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    schedule = schedule or (cfg.schedule() if cfg.variant in ("acdm", "acdm-ncn") else None)
    states = [x[:, i] for i in range(k)]
    for t in range(cfg.horizon):
        prev = np.stack(states[-k:], axis=1)
        states.append(predict_step(model, prev, param_series[:, t], cfg, rng, schedule, n_fields, mask))
    out = np.stack(states, axis=1)
    return out[0] if single else out


def member_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(seed + i) for i in range(n)]


def rollout(model, ref: Trajectory, cfg: RolloutConfig, start: int = 0, mask=None,
            rng=None, schedule=None) -> Trajectory:
    """Roll out from ``ref.states[start:start+k]``; known parameter values are
    taken from ``ref`` (holding the last one beyond its end)."""
    k, nf = cfg.k, ref.n_fields
    init = ref.states[start:start + k]
    if init.shape[0] != k:
        raise ValueError("reference too short for the initial window")
    idx = np.minimum(np.arange(start + k, start + k + cfg.horizon), ref.T)
    series = ref.states[idx, nf:, 0, 0]
    states = rollout_states(model, init, cfg, series, nf, mask,
                            rng if rng is not None else np.random.default_rng(cfg.seed), schedule)
    return _as_trajectory(states, ref, start, cfg, cfg.seed)


def _as_trajectory(states, ref: Trajectory, start: int, cfg: RolloutConfig, seed: int) -> Trajectory:
    n = states.shape[0]
    idx = np.minimum(np.arange(start, start + n), ref.T)
    params = {name: vals[idx] for name, vals in ref.params.items()}
    meta = dict(ref.meta)
    meta.update({"variant": cfg.variant, "seed": seed, "n_init": cfg.k, "start": start,
                 "source_ref": ref.source})
    return Trajectory(states, ref.dt, params, ref.channels, "rollout", ref.stats_ref, meta)


def posterior_ensemble(model, ref: Trajectory, cfg: RolloutConfig, start: int = 0,
                       mask=None) -> list[Trajectory]:
    """``cfg.ensemble_size`` rollouts from one initial window; member i uses
    seed ``cfg.seed + i``. Members are evaluated as one batch."""
    k, nf, n = cfg.k, ref.n_fields, cfg.ensemble_size
    init = np.broadcast_to(ref.states[start:start + k][None], (n,) + ref.states[start:start + k].shape)
    idx = np.minimum(np.arange(start + k, start + k + cfg.horizon), ref.T)
    series = ref.states[idx, nf:, 0, 0]
    rngs = member_rngs(cfg.seed, n)
    states = rollout_states(model, np.array(init), cfg, series, nf, mask, rngs)
    members = [_as_trajectory(states[i], ref, start, cfg, cfg.seed + i) for i in range(n)]
    if cfg.deterministic:
        for m in members[1:]:
            if not np.array_equal(m.states, members[0].states):
                raise RuntimeError("deterministic ensemble members diverged")
    return members
