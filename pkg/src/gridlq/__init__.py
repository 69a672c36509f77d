"""Structured solver for finite-horizon LQ optimal control of K x N grids
of coupled linear subsystems: KKT reduction to an SPD multiplier system,
nested block Jacobi preconditioning, and a conjugate gradient driver,
verified against a dense oracle at small scale."""

from .block_linalg import (
    BlockBanded,
    BlockTridiagCholesky,
    banded_matvec,
    block_tridiag_factor,
    block_tridiag_solve,
    dense_cholesky,
)
from .errors import (
    BreakdownError,
    DimensionGuardError,
    DimensionMismatchError,
    GridLQError,
    MaxIterationsExceeded,
    NotPositiveDefiniteError,
)
from .grid_problem import (
    BoundaryData,
    GridLQProblem,
    GridLayout,
    SubsystemData,
    generate_irrigation_case,
    generate_msd_case,
    load_problem,
    save_problem,
    state_offsets,
    validate,
)
from .kkt_assembly import (
    PairSplitting,
    SchurOperator,
    StackedSystem,
    apply_delta,
    build_schur,
    build_splitting,
    build_stacked,
    reference_stage_block,
)
from .nested_jacobi import NestedJacobiPreconditioner, nbjm_solve
from .pcg import SolveReport, cg_solve, pcg_solve
from .recovery import (
    ConditioningReport,
    TrajectorySolution,
    condition_numbers,
    dense_reference_solve,
    kkt_residual,
    recover_solution,
    simulate_states,
    spectral_radius,
    splitting_spectral_radii,
)

__all__ = [
    "BlockBanded",
    "BlockTridiagCholesky",
    "BoundaryData",
    "BreakdownError",
    "ConditioningReport",
    "DimensionGuardError",
    "DimensionMismatchError",
    "GridLQError",
    "GridLQProblem",
    "GridLayout",
    "MaxIterationsExceeded",
    "NestedJacobiPreconditioner",
    "NotPositiveDefiniteError",
    "PairSplitting",
    "SchurOperator",
    "SolveReport",
    "StackedSystem",
    "SubsystemData",
    "TrajectorySolution",
    "apply_delta",
    "banded_matvec",
    "block_tridiag_factor",
    "block_tridiag_solve",
    "build_schur",
    "build_splitting",
    "build_stacked",
    "cg_solve",
    "condition_numbers",
    "dense_cholesky",
    "dense_reference_solve",
    "generate_irrigation_case",
    "generate_msd_case",
    "kkt_residual",
    "load_problem",
    "nbjm_solve",
    "pcg_solve",
    "recover_solution",
    "reference_stage_block",
    "save_problem",
    "simulate_states",
    "spectral_radius",
    "splitting_spectral_radii",
    "state_offsets",
    "validate",
]

__version__ = "0.1.0"
