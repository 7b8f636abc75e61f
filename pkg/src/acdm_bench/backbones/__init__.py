from .models import (
    DILATIONS,
    KINDS,
    BackboneSpec,
    Model,
    autoscale_width,
    build,
    embed_diffusion_step,
    forward,
    param_count,
    spec_param_count,
)

__all__ = ["DILATIONS", "KINDS", "BackboneSpec", "Model", "autoscale_width", "build",
           "embed_diffusion_step", "forward", "param_count", "spec_param_count"]
