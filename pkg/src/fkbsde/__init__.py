"""Probabilistic representation of semilinear parabolic PDE solutions.

A spectrally truncated forward equation is simulated with an exponential
Euler stepper, the associated scalar backward equation is solved by
least-squares regression, and the pointwise value u(t, x) is read off as
the initial backward value.  The verification layer cross-checks the
solver against an explicit linear formula, a deterministic 1-D reference
solver, and a battery of structural probes (comparison, monotone
residuals, weak-norm continuity, terminal behavior, growth).
"""

__version__ = "0.1.0"

from .bsde import (
    BsdeSolution,
    DriverSpec,
    MonotoneResidual,
    RegressionBasis,
    apriori_check,
    as_general_driver,
    comparison_check,
    solve_backward,
    stability_check,
    supersolution_residual,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    FkbsdeError,
    GammaOverflowError,
    GridAlignmentError,
    LipschitzAuditError,
    OracleDomainError,
    PicardDivergenceError,
    PreconditionError,
    RegressionError,
    SimulationError,
    UnknownTagError,
)
from .fd_oracle import FdSolution, Grid1D, closed_form, solve_semilinear_fd
from .feynman_kac import (
    PdeProblem,
    SolverSettings,
    UEstimate,
    b_continuity_probe,
    evaluate_u,
    growth_probe,
    markov_consistency_check,
    oracle_compare,
    terminal_condition_probe,
)
from .forward import (
    CoefficientField,
    PathEnsemble,
    RngPolicy,
    TimeGrid,
    coefficient_preset,
    forward_stability_probe,
    read_ensemble_binary,
    sample_increments,
    simulate_ensemble,
    time_continuity_probe,
    write_ensemble_binary,
    write_ensemble_csv,
)
from .linear_bsde import (
    GammaEnsemble,
    LinearDriver,
    LinearValue,
    TerminalFunctional,
    dominance_check,
    gamma_paths,
    solve_linear_explicit,
)
from .presets import (
    PRESET_NAMES,
    calibration_family,
    initial_state,
    linear_battery,
    linear_counterpart,
    problem_preset,
)
from .spectral import (
    BWeight,
    DiagonalGenerator,
    NoiseModel,
    SpectralVector,
    apply_semigroup,
    default_bweight,
    generator_preset,
    norm_h,
    norm_hm1_sq,
    strong_b_check,
)
