from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FIELD_CHANNELS = ("vel_x", "vel_y", "pressure")


@dataclass
class Trajectory:
    """Time-ordered flow states.

    ``states`` has shape [T+1, C, H, W]: field channels first (see
    ``channels``), then one spatially constant channel per entry of
    ``params`` in insertion order. ``params`` maps a parameter name to its
    value at every step, so time-varying parameters are representable.
    ``H`` runs along the streamwise x axis and ``W`` along y.
    """

    states: np.ndarray
    dt: float
    params: dict[str, np.ndarray] = field(default_factory=dict)
    channels: tuple[str, ...] = FIELD_CHANNELS
    source: str = "unknown"
    stats_ref: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states)
        if self.states.ndim != 4:
            raise ValueError(f"states must be [T+1, C, H, W], got {self.states.shape}")
        if self.states.shape[0] < 2:
            raise ValueError("a trajectory needs at least two states (T >= 1)")
        self.params = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in self.params.items()}
        for name, vals in self.params.items():
            if vals.shape[0] != self.states.shape[0]:
                raise ValueError(f"param {name!r} has {vals.shape[0]} values for {self.states.shape[0]} states")
        self.channels = tuple(self.channels)
        if len(self.channels) + len(self.params) != self.states.shape[1]:
            raise ValueError(f"{len(self.channels)} field + {len(self.params)} param channels "
                             f"do not match C={self.states.shape[1]}")

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_fields(self) -> int:
        return len(self.channels)

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels) + list(self.params)

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    @property
    def grid(self) -> tuple[int, int]:
        return self.states.shape[2], self.states.shape[3]

    def param_matrix(self) -> np.ndarray:
        """[T+1, n_params] parameter values in registry order."""
        if not self.params:
            return np.zeros((self.states.shape[0], 0))
        return np.stack([self.params[k] for k in self.params], axis=1)

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.states[start:stop].copy(), self.dt,
                          {k: v[start:stop] for k, v in self.params.items()},
                          self.channels, self.source, self.stats_ref, dict(self.meta))
