"""Numerical laboratory for monotone finite-difference blow-up problems
driven by local and nonlocal Levy-type diffusion."""

from .lattice import (
    Extension,
    LatticeField,
    ZERO,
    constant_extension,
    mass,
    norm,
    restrict_function,
)
from .weights import (
    AssumptionReport,
    WeightKernel,
    build_kernel,
    cfl_tau_max,
    validate_assumptions,
)
from .operators import (
    BoundReport,
    FourierSymbol,
    apply,
    consistency_error,
    spectral_linear_solution,
    symbol,
    symbol_bounds,
)
from .evolution import (
    BLOWN_UP,
    BlowUpReport,
    GLOBAL_SUSPECTED,
    HORIZON_REACHED,
    SchemeConfig,
    SimulationTrace,
    check_initial_condition_b,
    decay_profile,
    g_factor,
    gamma_s,
    kaplan_check,
    rate_series,
    run_diffusion,
    run_semilinear,
    step,
)
from .eigen import (
    DirichletProblem,
    EigenResult,
    assemble_dirichlet_matrix,
    eigen_shape_checks,
    scaling_study,
    smallest_eigenpair,
    solve_dirichlet,
)
from .odekit import OdeClosedForm, blowup_times, state_at

__all__ = [name for name in dir() if not name.startswith("_")]
