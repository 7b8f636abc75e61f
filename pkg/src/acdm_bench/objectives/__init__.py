from .losses import (
    VARIANTS,
    DiffusionSchedule,
    ObjectiveConfig,
    acdm_train_step,
    check_sigma_min,
    forward_diffuse,
    make_schedule,
    nextstep_train_step,
    noisy_train_step,
    perturb_inputs,
    refiner_train_step,
    refiner_variances,
    unrolled_train_step,
)
from .train import TrainingDiverged, lr_at, objective_loss, train

__all__ = [
    "VARIANTS", "DiffusionSchedule", "ObjectiveConfig", "acdm_train_step", "check_sigma_min",
    "forward_diffuse", "make_schedule", "nextstep_train_step", "noisy_train_step",
    "perturb_inputs", "refiner_train_step", "refiner_variances", "unrolled_train_step",
    "TrainingDiverged", "lr_at", "objective_loss", "train",
]
