"""Rollout accuracy, correlation, stability and spectral statistics.

Functions accept a Trajectory or a raw [T+1, C, H, W] array. Unless told
otherwise they evaluate the field channels only (all channels for raw
arrays); ``mask`` is an [H, W] array with 1 in the fluid and 0 inside the
obstacle.
"""

from __future__ import annotations

import numpy as np

from ..data.trajectory import Trajectory


def _states(x) -> np.ndarray:
    return x.states if isinstance(x, Trajectory) else np.asarray(x, dtype=np.float64)


def _fields(x, n_fields: int | None = None) -> np.ndarray:
    s = _states(x)
    if n_fields is None:
        n_fields = x.n_fields if isinstance(x, Trajectory) else s.shape[1]
    return s[:, :n_fields]


def _flat(f: np.ndarray, mask) -> np.ndarray:
    """[T, F, H, W] -> [T, F, cells] restricted to the fluid."""
    if mask is None:
        return f.reshape(f.shape[0], f.shape[1], -1)
    return f[:, :, np.asarray(mask) > 0]


def rollout_mse(pred, ref, mask=None, n_fields: int | None = None, per_field: bool = False):
    """Mean squared error per step and its temporal mean.

    Returns ``(mean, series)``; the series has one entry per state (or
    [T, F] with ``per_field``).
    """
    p = _flat(_fields(pred, n_fields), mask)
    r = _flat(_fields(ref, n_fields), mask)
    if p.shape != r.shape:
        raise ValueError(f"prediction {p.shape} and reference {r.shape} differ")
    per = ((p - r) ** 2).mean(axis=2)
    series = per if per_field else per.mean(axis=1)
    return float(per.mean()), series


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two flattened fields; 0 if either is constant.

    Values within 1e-13 of +-1 are rounded to +-1, which absorbs the last-bit
    error of the norm products for (anti)proportional fields.
    """
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    if na <= 1e-12 * scale * np.sqrt(a.size) or nb <= 1e-12 * scale * np.sqrt(b.size):
        return 0.0
    rho = float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
    if 1.0 - abs(rho) <= 1e-13:
        rho = float(np.sign(rho))
    return rho


def pearson_over_time(pred, ref, mask=None, n_fields: int | None = None) -> np.ndarray:
    p = _flat(_fields(pred, n_fields), mask)
    r = _flat(_fields(ref, n_fields), mask)
    if p.shape != r.shape:
        raise ValueError(f"prediction {p.shape} and reference {r.shape} differ")
    return np.array([pearson(p[t], r[t]) for t in range(p.shape[0])])


def rate_of_change(traj, dt: float = 1.0, mask=None, n_fields: int | None = None) -> np.ndarray:
    """Mean absolute change per cell between consecutive states, over ``dt``
    (one normalized step by default). Length T for T+1 states."""
    f = _flat(_fields(traj, n_fields), mask)
    return np.abs(np.diff(f, axis=0)).mean(axis=(1, 2)) / dt


# ---------------------------------------------------------------------------
# spectra


def hann_power(series: np.ndarray, axis: int = -1) -> np.ndarray:
    """Power of the mean-removed, Hann-windowed real FFT along ``axis``."""
    x = np.moveaxis(np.asarray(series, dtype=np.float64), axis, -1)
    x = x - x.mean(axis=-1, keepdims=True)
    w = np.hanning(x.shape[-1]) if x.shape[-1] > 1 else np.ones(1)
    return np.abs(np.fft.rfft(x * w, axis=-1)) ** 2


def default_probe(traj: Trajectory) -> tuple[int, int]:
    """Cell one cylinder diameter downstream of the cylinder's back end, on
    the centreline."""
    geo = traj.meta.get("geometry") if traj.meta else None
    H, W = traj.grid
    if not geo:
        return H // 2, W // 2
    h = geo["height"] / W
    d = geo["diameter"] * geo["height"]
    x = geo["cylinder_x"] * geo["length"] + 0.5 * d + d
    return min(int(x / h), H - 1), min(int(geo["cylinder_y"] * W), W - 1)


def default_line(traj: Trajectory) -> int:
    """x index of the vertical line through the default probe."""
    return default_probe(traj)[0]


def temporal_spectrum_probe(traj, probe: tuple[int, int] | None = None, channel: int = 1):
    """Hann-windowed power of one channel at a point over time.

    Returns ``(freqs, power)`` with frequencies in cycles per step. The
    default channel is the cross-stream velocity.
    """
    s = _states(traj)
    if probe is None:
        probe = default_probe(traj) if isinstance(traj, Trajectory) else (s.shape[2] // 2, s.shape[3] // 2)
    series = s[:, channel, probe[0], probe[1]]
    return np.fft.rfftfreq(series.size), hann_power(series)


def spatial_spectrum_line(traj, line: int | None = None, channel: int = 0):
    """Time-averaged Hann-windowed power of one channel along the vertical
    line ``x = line`` (cells across the flow). Returns ``(wavenumbers, power)``
    with wavenumbers in cycles per cell."""
    s = _states(traj)
    if line is None:
        line = default_line(traj) if isinstance(traj, Trajectory) else s.shape[2] // 2
    rows = s[:, channel, line, :]
    return np.fft.rfftfreq(rows.shape[1]), hann_power(rows, axis=1).mean(axis=0)


def tke_spectrum(traj, channels: tuple[int, int] = (0, 1)):
    """Turbulent kinetic energy per integer wavenumber magnitude.

    Fluctuations are taken about the temporal mean; for each state the
    normalized 2D FFT energy 0.5 (|u_k|^2 + |v_k|^2) is binned by
    ``round(|k|)`` (integer wavenumbers in x and y) and the result averaged
    over time. The bins sum to 0.5 * mean(u'^2 + v'^2).
    """
    s = _states(traj)
    u = s[:, channels[0]]
    v = s[:, channels[1]]
    u = u - u.mean(axis=0)
    v = v - v.mean(axis=0)
    T_, H, W = u.shape
    n = H * W
    e = 0.5 * (np.abs(np.fft.fft2(u)) ** 2 + np.abs(np.fft.fft2(v)) ** 2) / (n * n)
    kx = np.fft.fftfreq(H, 1.0 / H)
    ky = np.fft.fftfreq(W, 1.0 / W)
    kmag = np.rint(np.sqrt(kx[:, None] ** 2 + ky[None, :] ** 2)).astype(int)
    nbins = kmag.max() + 1
    spec = np.zeros(nbins)
    np.add.at(spec, kmag.ravel(), e.mean(axis=0).ravel())
    return np.arange(nbins), spec


def vorticity(state: np.ndarray, dx: float = 1.0, dy: float = 1.0, channels=(0, 1)) -> np.ndarray:
    """dv/dx - du/dy of a [C, H, W] state (x along H); central differences
    inside, one-sided at the boundary."""
    u = state[channels[0]]
    v = state[channels[1]]
    return np.gradient(v, dx, axis=0) - np.gradient(u, dy, axis=1)


# ---------------------------------------------------------------------------
# ensembles


def aggregate(values) -> dict:
    """Mean, std and 5th/95th percentiles over the first axis
    (members or runs); independent of member order."""
    v = np.sort(np.asarray(values, dtype=np.float64), axis=0)
    return {"mean": v.mean(axis=0), "std": v.std(axis=0),
            "p05": np.percentile(v, 5, axis=0), "p95": np.percentile(v, 95, axis=0)}


def ensemble_std(members, n_fields: int | None = None) -> np.ndarray:
    """Per-cell standard deviation across members, averaged over time and
    field channels: [H, W]."""
    f = np.stack([_fields(m, n_fields) for m in members])
    return f.std(axis=0).mean(axis=(0, 1))


def pairwise_l2(members, n_fields: int | None = None) -> float:
    """Mean L2 distance between all member pairs."""
    f = [_fields(m, n_fields).ravel() for m in members]
    d = [np.linalg.norm(f[i] - f[j]) for i in range(len(f)) for j in range(i + 1, len(f))]
    return float(np.mean(d)) if d else 0.0


def wake_regions(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Boolean [H, W] masks for the wake (downstream of the cylinder within
    one diameter of the centreline) and the freestream upstream of it."""
    geo = traj.meta["geometry"]
    H, W = traj.grid
    h = geo["height"] / W
    d = geo["diameter"] * geo["height"]
    cx = geo["cylinder_x"] * geo["length"]
    cy = geo["cylinder_y"] * geo["height"]
    x = (np.arange(H) + 0.5)[:, None] * h
    y = (np.arange(W) + 0.5)[None, :] * h
    wake = (x > cx + 0.5 * d) & (np.abs(y - cy) <= d)
    free = np.broadcast_to(x < cx - d, (H, W))
    return wake, free.copy()
