"""Output-feedback stochastic MPC with sub-Gaussian variance proxies.

Calibrates scalar variance proxies from noise samples, propagates them
through observer/controller error dynamics, turns the resulting confidence
sets into constraint tightenings, and runs tube MPC campaigns against
distributionally-robust and worst-case baselines.
"""
from .baselines import dr_propagate, robust_propagate
from .bounds import (
    Box,
    ChebyshevEllipsoid,
    Cylinder,
    Ellipsoid,
    HalfSpace,
    chebyshev_set,
    contains_points,
    corollary_growth_bound,
    elliptical_radius_sq,
    g_inverse,
    support_function,
)
from .design import (
    ErrorSystem,
    LinearSystem,
    NoiseSpec,
    build_error_system,
    design_observer,
    solve_dare,
)
from .envs import Environment, mass_spring_damper, surgical_planning, with_noise_scales
from .harness import (
    DesignBundle,
    TrialRecord,
    build_tightening,
    calibrate_design,
    containment_metrics,
    make_controller_config,
    make_controller_factory,
    mpc_metrics,
    run_campaign,
    simulate_error_trajectories,
    state_error_sets,
    steady_equilibrium,
    terminal_set,
)
from .mpc import InfeasibleAtStartError, MpcConfig, init_state, step
from .reachability import ProxySequence, propagate_proxy, prs_sequence, state_input_proxy
from .subgaussian import (
    CalibrationResult,
    ScalarProxy,
    calibrate_details,
    calibrate_scalar_proxy,
)
from .tightening import (
    EmptyTightenedError,
    Polytope,
    TightenedSequence,
    maximal_invariant_set,
    minkowski_diff,
)

__all__ = [
    "Box",
    "CalibrationResult",
    "ChebyshevEllipsoid",
    "Cylinder",
    "DesignBundle",
    "Ellipsoid",
    "EmptyTightenedError",
    "Environment",
    "ErrorSystem",
    "HalfSpace",
    "InfeasibleAtStartError",
    "LinearSystem",
    "MpcConfig",
    "NoiseSpec",
    "Polytope",
    "ProxySequence",
    "ScalarProxy",
    "TightenedSequence",
    "TrialRecord",
    "build_error_system",
    "build_tightening",
    "calibrate_design",
    "calibrate_details",
    "calibrate_scalar_proxy",
    "chebyshev_set",
    "containment_metrics",
    "contains_points",
    "corollary_growth_bound",
    "design_observer",
    "dr_propagate",
    "elliptical_radius_sq",
    "g_inverse",
    "init_state",
    "make_controller_config",
    "make_controller_factory",
    "mass_spring_damper",
    "maximal_invariant_set",
    "minkowski_diff",
    "mpc_metrics",
    "propagate_proxy",
    "prs_sequence",
    "robust_propagate",
    "run_campaign",
    "simulate_error_trajectories",
    "solve_dare",
    "state_error_sets",
    "state_input_proxy",
    "steady_equilibrium",
    "step",
    "support_function",
    "surgical_planning",
    "terminal_set",
    "with_noise_scales",
]

__version__ = "0.1.0"
