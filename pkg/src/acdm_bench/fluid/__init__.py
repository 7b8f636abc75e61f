from .solver import (
    CGNotConverged,
    Domain,
    SimConfig,
    SimulationError,
    SolverState,
    StabilityError,
    advect_maccormack,
    apply_boundaries,
    collocated,
    conjugate_gradient,
    cylinder_mask,
    diffuse_explicit,
    divergence,
    export_mask,
    generate_trajectory,
    initial_state,
    inflow_profile,
    maccormack,
    project_pressure_cg,
    step,
    viscosity,
)

__all__ = [
    "CGNotConverged", "Domain", "SimConfig", "SimulationError", "SolverState", "StabilityError",
    "advect_maccormack", "apply_boundaries", "collocated", "conjugate_gradient", "cylinder_mask",
    "diffuse_explicit", "divergence", "export_mask", "generate_trajectory", "initial_state",
    "inflow_profile", "maccormack", "project_pressure_cg", "step", "viscosity",
]
