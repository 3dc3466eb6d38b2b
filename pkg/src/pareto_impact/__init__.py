"""Market indifference prices and price impact for a large investor facing
utility-maximizing market makers on a finite scenario space."""

from .pareto_field import (
    FieldDerivatives,
    ParetoPoint,
    check_F_space_properties,
    eval_point,
    field_derivatives,
)
from .representative import eval_representative, second_derivatives
from .scenario import (
    InitialState,
    Problem,
    ScenarioError,
    ScenarioSpace,
    build_initial,
    load_scenario,
    make_problem,
    problem_from_document,
)
from .solver import (
    ImpactReport,
    IndifferenceResult,
    SolverError,
    eval_G0,
    expansion_residual,
    impact_report,
    weight_variance_diagnostics,
    solve_indifference,
)
from .utility import UtilityFunction, verify_assumptions

__version__ = "0.1.0"
