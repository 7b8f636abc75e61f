from .inference import (
    DETERMINISTIC,
    STOCHASTIC,
    RolloutConfig,
    acdm_predict_step,
    member_rngs,
    nextstep_predict_step,
    posterior_ensemble,
    predict_step,
    refiner_predict_step,
    reverse_step,
    rollout,
    rollout_states,
)

__all__ = [
    "DETERMINISTIC", "STOCHASTIC", "RolloutConfig", "acdm_predict_step", "member_rngs",
    "nextstep_predict_step", "posterior_ensemble", "predict_step", "refiner_predict_step",
    "reverse_step", "rollout", "rollout_states",
]
