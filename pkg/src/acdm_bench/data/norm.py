from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import Trajectory

log = logging.getLogger(__name__)

VELOCITY = ("vel_x", "vel_y")


class ProvenanceError(ValueError):
    pass


def fluid_mask(traj: Trajectory) -> np.ndarray:
    """[H, W] multiplicative mask: 1 in the fluid, 0 inside the obstacle."""
    H, W = traj.grid
    geo = traj.meta.get("geometry") if traj.meta else None
    if not geo:
        return np.ones((H, W))
    from ..fluid.solver import cylinder_mask

    return (~cylinder_mask(H, W, geo["cylinder_x"], geo["cylinder_y"], geo["diameter"])).astype(float)


def apply_mask(state: np.ndarray, mask: np.ndarray, n_fields: int | None = None) -> np.ndarray:
    """Zero the obstacle region of the first ``n_fields`` channels (all if None).

    ``state`` is [..., C, H, W]; ``mask`` is [H, W] with 1 = keep. Parameter
    channels are left alone so they stay spatially constant.
    """
    out = np.array(state, dtype=np.float64, copy=True)
    sl = slice(None) if n_fields is None else slice(0, n_fields)
    out[..., sl, :, :] *= mask
    return out


@dataclass
class NormStats:
    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (len(self.channels),) or self.std.shape != self.mean.shape:
            raise ValueError("mean/std must have one entry per channel")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive for every channel")

    @property
    def ref(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.channels).encode())
        h.update(self.mean.astype("<f8").tobytes())
        h.update(self.std.astype("<f8").tobytes())
        return "stats-" + h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "mean": self.mean.tolist(),
                "std": self.std.tolist(), "ref": self.ref}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        st = cls(d["channels"], d["mean"], d["std"])
        if "ref" in d and d["ref"] != st.ref:
            raise ProvenanceError(f"stored ref {d['ref']} does not match contents {st.ref}")
        return st

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_norm_stats(trajs: list[Trajectory]) -> NormStats:
    """Global statistics over a (training) set of raw trajectories.

    Field channels use fluid cells only. The two velocity components get their
    own means but share one scale: the RMS of both centred components pooled.
    A channel with no spread (e.g. a single Reynolds number) keeps std 1.
    """
    if not trajs:
        raise ValueError("need at least one trajectory")
    names = trajs[0].channel_names
    for tr in trajs:
        if tr.channel_names != names:
            raise ValueError("trajectories disagree on channel layout")
        if tr.stats_ref is not None:
            raise ProvenanceError("statistics must come from raw (unnormalized) data")
    n_fields = trajs[0].n_fields
    C = len(names)
    s1 = np.zeros(C)
    s2 = np.zeros(C)
    cnt = np.zeros(C)
    for tr in trajs:
        m = fluid_mask(tr).astype(bool)
        x = tr.states
        for c in range(C):
            vals = x[:, c][:, m] if c < n_fields else x[:, c]
            s1[c] += vals.sum()
            cnt[c] += vals.size
    mean = s1 / cnt
    for tr in trajs:
        m = fluid_mask(tr).astype(bool)
        x = tr.states
        for c in range(C):
            vals = x[:, c][:, m] if c < n_fields else x[:, c]
            s2[c] += ((vals - mean[c]) ** 2).sum()
    var = s2 / cnt
    vel = [names.index(v) for v in VELOCITY if v in names]
    if len(vel) == 2:
        var[vel] = var[vel].sum() / 2.0
    std = np.sqrt(var)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    for c in np.nonzero(flat)[0]:
        log.warning("channel %s has no spread; centring only", names[c])
    std[flat] = 1.0
    return NormStats(names, mean, std)


def _affine(x: np.ndarray, stats: NormStats, inverse: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3] != len(stats.channels):
        raise ValueError(f"state has {x.shape[-3]} channels, stats cover {len(stats.channels)}")
    mu = stats.mean[:, None, None]
    sd = stats.std[:, None, None]
    return x * sd + mu if inverse else (x - mu) / sd


def normalize(x, stats: NormStats):
    """Normalize a Trajectory or a raw [..., C, H, W] array."""
    if isinstance(x, Trajectory):
        if x.stats_ref is not None:
            raise ProvenanceError(f"trajectory already normalized with {x.stats_ref}")
        return Trajectory(_affine(x.states, stats, False), x.dt, x.params, x.channels,
                          x.source, stats.ref, dict(x.meta))
    return _affine(x, stats, False)


def denormalize(x, stats: NormStats):
    """Inverse of :func:`normalize`; trajectories must carry the matching ref."""
    if isinstance(x, Trajectory):
        if x.stats_ref != stats.ref:
            raise ProvenanceError(f"trajectory normalized with {x.stats_ref}, not {stats.ref}")
        return Trajectory(_affine(x.states, stats, True), x.dt, x.params, x.channels,
                          x.source, None, dict(x.meta))
    return _affine(x, stats, True)


def normalize_params(values, stats: NormStats, names: list[str]) -> np.ndarray:
    """Map raw parameter values ([..., P]) to their normalized channel values."""
    idx = [stats.channels.index(n) for n in names]
    v = np.asarray(values, dtype=np.float64)
    return (v - stats.mean[idx]) / stats.std[idx]
