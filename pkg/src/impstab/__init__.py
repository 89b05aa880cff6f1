"""Impulsive stabilization of linear delay differential equations."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CacheMissError,
    ConfigError,
    CostEvaluationError,
    DefectiveSpectrumError,
    EmptyWindowError,
    ImpstabError,
    InfeasibleError,
    InvalidArgumentError,
    InvalidBasisError,
    NormalizationSingularError,
    RefinementError,
    TrajectoryFormatError,
)
from .spectrum import (  # noqa: E402
    DdeSystem,
    EigenWindow,
    SpectralData,
    Spectrum,
    bilinear_form,
    chebyshev_diff,
    compute_spectrum,
    discretize_generator,
    eigendata,
    rightmost_eigenvalues,
)
from .probe import (  # noqa: E402
    ControlSpace,
    ProbeData,
    block_matrix_exponential,
    monodromy_at,
    probe_map,
    rank_diagnostic,
    spectral_radius,
)
from .control_space import (  # noqa: E402
    box_and_columnsum_constraint,
    box_constraint,
    diagonal_basis,
    explicit_basis,
    reassignment_basis,
)
from .synthesis import (  # noqa: E402
    Controller,
    SolverSettings,
    SynthesisProblem,
    TanhAbsCost,
    evaluate_cost,
    feasibility,
    synthesize,
    verify_controller,
)
from .simulate import (  # noqa: E402
    SimConfig,
    Trajectory,
    convergence_rate,
    read_csv,
    simulate_linear,
    simulate_nonlinear,
    write_csv,
)
