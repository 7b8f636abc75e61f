from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory


def expand_params(values, H: int, W: int) -> np.ndarray:
    """Spatially constant channels from scalar parameters.

    ``values`` is a mapping (registry order = insertion order), a sequence of
    P scalars, or an array [..., P]; the result is [..., P, H, W].
    """
    if isinstance(values, dict):
        values = list(values.values())
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        v = v[None]
    return np.broadcast_to(v[..., None, None], v.shape + (H, W)).copy()


@dataclass
class Window:
    cond: np.ndarray      # [k, C, H, W]
    targets: np.ndarray   # [m, C, H, W]
    start: int
    stride: int
    mask: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.cond.shape[0]

    @property
    def m(self) -> int:
        return self.targets.shape[0]


def _span(k: int, targets: int, stride: int) -> int:
    if k < 1 or targets < 1 or stride < 1:
        raise ValueError("k, targets and stride must be >= 1")
    return (k + targets - 1) * stride


def valid_starts(n_states: int, k: int, targets: int, stride: int = 1) -> np.ndarray:
    span = _span(k, targets, stride)
    if span > n_states - 1:
        raise ValueError(f"window of {k}+{targets} states at stride {stride} "
                         f"does not fit {n_states} states")
    return np.arange(n_states - span)


def window_at(traj: Trajectory, start: int, k: int, targets: int, stride: int = 1,
              mask: np.ndarray | None = None) -> Window:
    idx = start + stride * np.arange(k + targets)
    if idx[0] < 0 or idx[-1] > traj.T:
        raise IndexError(f"window {idx[0]}..{idx[-1]} outside 0..{traj.T}")
    s = traj.states[idx]
    return Window(s[:k], s[k:], int(start), stride, mask)


def sample_window(traj: Trajectory, k: int, targets: int, stride: int,
                  rng: np.random.Generator, mask: np.ndarray | None = None) -> Window:
    """One window with a uniformly drawn start index."""
    starts = valid_starts(traj.T + 1, k, targets, stride)
    return window_at(traj, int(rng.integers(starts.size)), k, targets, stride, mask)


def epoch_starts(n_states: int, k: int, targets: int, stride: int, seq_len: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Window starts for one pass over a trajectory.

    The trajectory is cut into sequences of ``seq_len`` windows whose
    boundaries are shifted by a random amount of up to half a sequence,
    forwards or backwards; the windows of all shifted sequences are returned.
    """
    starts = valid_starts(n_states, k, targets, stride)
    n = starts.size
    seq_len = max(1, min(seq_len, n))
    out = []
    for first in range(0, n, seq_len):
        shift = int(rng.integers(-(seq_len // 2), seq_len // 2 + 1))
        lo = min(max(first + shift, 0), n - seq_len)
        out.append(np.arange(lo, lo + seq_len))
    return np.concatenate(out)


class WindowSampler:
    """Epoch iterator over windows of several trajectories.

    The visiting order is a pure function of the seed.
    """

    def __init__(self, trajs: list[Trajectory], k: int, targets: int = 1, stride: int = 1,
                 seq_len: int = 8, masks: list[np.ndarray] | None = None):
        self.trajs = trajs
        self.k, self.targets, self.stride, self.seq_len = k, targets, stride, seq_len
        self.masks = masks
        for tr in trajs:
            valid_starts(tr.T + 1, k, targets, stride)

    def epoch(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        items = []
        for i, tr in enumerate(self.trajs):
            for s in epoch_starts(tr.T + 1, self.k, self.targets, self.stride, self.seq_len, rng):
                items.append((i, int(s)))
        order = rng.permutation(len(items))
        return [items[j] for j in order]

    def window(self, item: tuple[int, int]) -> Window:
        i, s = item
        mask = None if self.masks is None else self.masks[i]
        return window_at(self.trajs[i], s, self.k, self.targets, self.stride, mask)

    def batches(self, batch_size: int, rng: np.random.Generator):
        """Endless stream of (cond [B,k,C,H,W], targets [B,m,C,H,W], mask [B,H,W] | None)."""
        while True:
            items = self.epoch(rng)
            # tiny datasets: join epochs until one batch fits
            while len(items) < batch_size:
                items += self.epoch(rng)
            for b in range(0, len(items) - batch_size + 1, batch_size):
                ws = [self.window(it) for it in items[b:b + batch_size]]
                mask = None if self.masks is None else np.stack([w.mask for w in ws])
                yield np.stack([w.cond for w in ws]), np.stack([w.targets for w in ws]), mask
