"""Single-column moist convection by discrete parcel rearrangement."""

from .ensemble import (
    CellLaw, EmpiricalMarginal, EnsembleResult, InitialEnsemble, Profile, check_admissibility,
    discretize_conditional, discretize_profile, enumerate_sigmas, marginal, marginal_distance,
    run_ensemble, sample_sigmas,
)
from .errors import (
    ConfigError, EnsembleMemberError, ModelError, MoistcolError, SolverError, StepInvariantError,
)
from .rearrange import (
    ColumnState, StepReport, SubStep, apply_jump, eligible_set, select_jumper, step, wet_set,
)
from .report import CheckReport
from .saturation import (
    DEFAULT_SOLVER, DomainBox, ModelKind, SaturationModel, SolverConfig, ThetaBounds,
    compute_bounds, eval_qsat, max_timestep, theta_inverse,
)
from .simulate import FlowMap, LagrangianPath, Trajectory, flow_map, lagrangian_paths, run, theta_bar

__version__ = "0.1.0"
