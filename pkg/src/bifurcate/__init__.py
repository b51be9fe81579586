"""Continuation and verification toolkit for steady states of the harvested
diffusive logistic equation on an interval."""

__version__ = "0.1.0"

from .grid import (
    DiscreteDomain,
    DiscreteField,
    EigenPair,
    LinearOperatorBanded,
    assemble_laplacian,
    build_grid,
    inner_product,
    laplacian_eigenpairs,
)
from .model import (
    HARVEST_PROFILES,
    HarvestSpec,
    HypothesisCheck,
    HypothesisReport,
    ModelError,
    Nonlinearity,
    check_hypotheses,
    critical_cap,
    eval_nonlinearity,
)
from .solver import (
    NEWTON_TOL,
    Diverged,
    NonConvergence,
    Problem,
    ProblemState,
    SingularJacobian,
    SolutionPoint,
    classify_state,
    degeneracy_tolerance,
    energy_functional,
    newton_solve,
    time_march,
)
from .spectral import (
    InsufficientSpectrum,
    SpectrumSlice,
    linearized_spectrum,
    morse_index,
)
from .continuation import (
    Branch,
    BranchEvent,
    DegenerateCurve,
    DegeneratePoint,
    DegenerateSegment,
    StepUnderflow,
    WrongKind,
    branch_derivative_at_zero,
    build_degenerate_segment,
    continue_branch,
    continue_czero_branch,
    delta_window,
    fold_normal_form_checks,
    refine_fold,
    solve_at_projection,
    trace_fold_curve,
    trace_index1_degenerate_curve,
)
from .diagram import (
    REGIMES,
    AssemblyIncomplete,
    BifurcationDiagram,
    ClaimCheck,
    SolutionSet,
    VerificationReport,
    assemble_diagram,
    count_solutions,
    default_thread_count,
    diagram_solutions_at,
    stability_crosscheck,
    verify_structure,
)
from .cli import (
    ConfigError,
    RunConfig,
    diagram_payload,
    diagrams_equal,
    emit_csv,
    load_config,
    load_diagram,
    parse_config,
    render_svg,
)
from . import cli

__all__ = [
    "DiscreteDomain",
    "DiscreteField",
    "EigenPair",
    "LinearOperatorBanded",
    "assemble_laplacian",
    "build_grid",
    "inner_product",
    "laplacian_eigenpairs",
    "HARVEST_PROFILES",
    "HarvestSpec",
    "HypothesisCheck",
    "HypothesisReport",
    "ModelError",
    "Nonlinearity",
    "check_hypotheses",
    "critical_cap",
    "eval_nonlinearity",
    "NEWTON_TOL",
    "Diverged",
    "NonConvergence",
    "Problem",
    "ProblemState",
    "SingularJacobian",
    "SolutionPoint",
    "classify_state",
    "degeneracy_tolerance",
    "energy_functional",
    "newton_solve",
    "time_march",
    "InsufficientSpectrum",
    "SpectrumSlice",
    "linearized_spectrum",
    "morse_index",
    "Branch",
    "BranchEvent",
    "DegenerateCurve",
    "DegeneratePoint",
    "DegenerateSegment",
    "StepUnderflow",
    "WrongKind",
    "branch_derivative_at_zero",
    "build_degenerate_segment",
    "continue_branch",
    "continue_czero_branch",
    "delta_window",
    "fold_normal_form_checks",
    "refine_fold",
    "solve_at_projection",
    "trace_fold_curve",
    "trace_index1_degenerate_curve",
    "REGIMES",
    "AssemblyIncomplete",
    "BifurcationDiagram",
    "ClaimCheck",
    "SolutionSet",
    "VerificationReport",
    "assemble_diagram",
    "count_solutions",
    "default_thread_count",
    "diagram_solutions_at",
    "stability_crosscheck",
    "verify_structure",
    "ConfigError",
    "RunConfig",
    "cli",
    "diagram_payload",
    "diagrams_equal",
    "emit_csv",
    "load_config",
    "load_diagram",
    "parse_config",
    "render_svg",
    "__version__",
]
