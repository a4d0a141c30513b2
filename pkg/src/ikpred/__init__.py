"""Optimal intermittent Kalman prediction under a measurement budget.

Given a linear Gaussian state-space model, a horizon T and a budget of N
measurements, this package finds the measurement schedule minimizing the
cumulative predicted-position error variance, runs the intermittent
Kalman predictor against trajectories, identifies models from data by
EM, and benchmarks the result against regular-rate baselines.
"""

from .benchmark import (
    BenchConfig,
    BenchRecord,
    BenchReport,
    format_report_table,
    rms_error,
    run_baseline_hold,
    run_benchmark,
    write_report_csv,
)
from .model import (
    InvalidModelError,
    InvalidScheduleError,
    Schedule,
    StateSpaceModel,
    ValidationResult,
    WarmupConfig,
    load_model,
    load_schedule,
    model_from_dict,
    model_to_dict,
    regular_schedule,
    save_model,
    save_schedule,
    schedule_from_dict,
    schedule_to_dict,
    validate_model,
)
from .optimizer import (
    GaConfig,
    OptimizationResult,
    ScheduleObjective,
    exhaustive_search,
    genetic_search,
    repair_duplicates,
)
from .predictor import (
    BeliefTrajectory,
    CovarianceTrace,
    MeasurementMismatchError,
    measure_update_cov,
    objective,
    run_covariance,
    run_predictor,
    time_update_cov,
    write_belief_csv,
)
from .simulate import (
    MassSpringConfig,
    Trajectory,
    TrajectoryParseError,
    inject_noise,
    load_trajectory_csv,
    mass_spring_model,
    respiratory_surrogate,
    simulate_mass_spring,
    simulate_model,
    stiffness_for_period,
    write_trajectory_csv,
)
from .sysid import (
    EmConfig,
    EmDivergenceError,
    FitDiagnostics,
    SmoothedBelief,
    e_step,
    fit,
    m_step,
    one_step_rms,
    select_state_dim,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
