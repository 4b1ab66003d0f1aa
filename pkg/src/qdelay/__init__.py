"""Delayed switching feedback control for preparing GHZ/Bell states."""

__version__ = "0.1.0"

from .quantum import (  # noqa: E402
    SystemSpec, TargetSpec, backaction, bell_example_spec, build_observable,
    control_signal_raw, dissipator, distance_v, ghz_state, lyapunov_v1,
    validate_hamiltonians,
)
from .sme import IntegratorConfig, NoiseModel, TrajectoryState, em_step, sanitize  # noqa: E402
from .control import (  # noqa: E402
    ControllerState, DelayBuffer, Region, Strategy, bangbang_policy,
    classify_region, lyapunov_policy,
)
from .lmi import LmiCandidate, LmiProblem, assemble_lmi, search_feasible  # noqa: E402
from .experiment import (  # noqa: E402
    ExperimentConfig, export_csv, preset, run_ensemble, run_trajectory,
)
