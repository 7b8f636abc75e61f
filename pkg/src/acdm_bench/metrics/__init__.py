from .core import (
    aggregate,
    default_line,
    default_probe,
    ensemble_std,
    hann_power,
    pairwise_l2,
    pearson,
    pearson_over_time,
    rate_of_change,
    rollout_mse,
    spatial_spectrum_line,
    temporal_spectrum_probe,
    tke_spectrum,
    vorticity,
    wake_regions,
)
from .report import EvalReport

__all__ = [
    "aggregate", "default_line", "default_probe", "ensemble_std", "hann_power", "pairwise_l2",
    "pearson", "pearson_over_time", "rate_of_change", "rollout_mse", "spatial_spectrum_line",
    "temporal_spectrum_probe", "tke_spectrum", "vorticity", "wake_regions", "EvalReport",
]
