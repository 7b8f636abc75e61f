from .flowseq import FlowseqError, read_flowseq, read_header, write_flowseq
from .norm import (
    NormStats,
    ProvenanceError,
    apply_mask,
    compute_norm_stats,
    denormalize,
    fluid_mask,
    normalize,
    normalize_params,
)
from .trajectory import FIELD_CHANNELS, Trajectory
from .windows import (
    Window,
    WindowSampler,
    epoch_starts,
    expand_params,
    sample_window,
    valid_starts,
    window_at,
)

__all__ = [
    "FlowseqError", "read_flowseq", "read_header", "write_flowseq", "NormStats",
    "ProvenanceError", "apply_mask", "compute_norm_stats", "denormalize", "fluid_mask",
    "normalize", "normalize_params", "FIELD_CHANNELS", "Trajectory", "Window", "WindowSampler",
    "epoch_starts", "expand_params", "sample_window", "valid_starts", "window_at",
]
