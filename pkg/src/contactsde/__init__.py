"""Stochastic contact Hamiltonian systems: simulation, tangent flow, and
structure-preservation verification."""

from . import catalog, errors, expr, flow, geometry, verification
from .catalog import (
    ActionAngleMap,
    CATALOG,
    action_angle_pushforward,
    dissipative_system,
    sasaki_einstein_system,
    se_action_angle_map,
)
from .expr import EvalTape, compile_tape, differentiate, evaluate, parse
from .flow import (
    AugmentedTrajectory,
    BrownianPath,
    Trajectory,
    coarsen,
    integrate,
    integrate_augmented,
    sample_brownian,
    step,
)
from .geometry import (
    DarbouxChart,
    HamiltonianSystem,
    SasakiEinsteinChart,
    chart_by_id,
    check_integrability,
    check_intrinsic_relations,
    contact_vector_field,
    jacobi_bracket,
    jacobi_bracket_expr,
    reeb_derivative,
    sample_states,
)
from .verification import (
    ContactDefectReport,
    ConvergenceReport,
    EnsembleStats,
    contact_defect,
    conformal_factor_check,
    convergence_study,
    defect_convergence,
    finite_difference_jacobian,
    monte_carlo,
)

__version__ = "0.1.0"
