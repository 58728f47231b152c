"""Data models for AGCA multigrid: run configuration, solve reports and experiment results."""

import itertools
import math
from enum import Enum
from typing import ClassVar, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class EvalMode(str, Enum):
    """How the viscosity enters element integrals."""

    ANALYTIC = "analytic"
    INTERP_P1 = "interp_p1"
    MEAN_ARITHMETIC = "mean_arithmetic"
    MEAN_HARMONIC = "mean_harmonic"
    MEAN_GEOMETRIC = "mean_geometric"

    @property
    def is_mean(self) -> bool:
        """Return True for the three element-constant modes."""
        return self in (
            EvalMode.MEAN_ARITHMETIC,
            EvalMode.MEAN_HARMONIC,
            EvalMode.MEAN_GEOMETRIC,
        )


class CoarseningMode(str, Enum):
    """Coarse-grid operator strategy."""

    DCA = "dca"
    AGCA = "agca"
    GCA = "gca"


class RhsSign(str, Enum):
    """Sign convention of the forcing for the smooth multi-sinker family."""

    LITERAL = "literal"
    DOWNWARD = "downward"


class SchurSign(str, Enum):
    """Sign of the off-diagonal block of the block-triangular preconditioner."""

    PLUS = "plus"
    MINUS = "minus"

    @property
    def factor(self) -> float:
        """Return +1.0 or -1.0."""
        return 1.0 if self is SchurSign.PLUS else -1.0


class MeshConfig(BaseModel):
    """Macro grid size and refinement depth."""

    nx: int = Field(default=8, description="Macro cells along x")
    ny: int = Field(default=8, description="Macro cells along y")
    levels: int = Field(default=3, description="Number of uniform refinements L")

    @field_validator("nx", "ny")
    @classmethod
    def validate_counts(cls, v: int) -> int:
        """Validate that macro cell counts are positive."""
        if v < 1:
            raise ValueError(f"Macro cell count must be >= 1, got {v}")
        return v

    @field_validator("levels")
    @classmethod
    def validate_levels(cls, v: int) -> int:
        """Validate that at least one refinement is requested."""
        if v < 1:
            raise ValueError(f"Number of levels must be >= 1, got {v}")
        return v


class ProblemConfig(BaseModel):
    """A sinker benchmark instance (or the scalar Poisson validation problem)."""

    family: Union[int, Literal["poisson"]] = Field(
        default=1, description="Viscosity family 1..6, or 'poisson' for the scalar validation solve"
    )
    dynamic_ratio: float = Field(default=1.0e4, description="eta_high / eta_low")
    omega: float = Field(default=200.0, description="Steepness of the smooth families 3 and 5")
    n_sinkers: int = Field(default=1, description="Number of sinkers (families 5 and 6)")
    positions: Optional[list[tuple[float, float]]] = Field(
        default=None, description="Explicit sinker centers; Halton points when omitted"
    )
    eval_mode: EvalMode = Field(default=EvalMode.ANALYTIC, description="Coefficient evaluation")
    rhs_sign: RhsSign = Field(default=RhsSign.LITERAL, description="Forcing sign for family 5")
    sinker_union: bool = Field(
        default=True, description="Family 6 as union of balls (False: literal product)"
    )
    coefficient_family: Optional[int] = Field(
        default=None, description="Poisson only: sinker family used as diffusion coefficient"
    )

    @field_validator("family")
    @classmethod
    def validate_family(cls, v: Union[int, str]) -> Union[int, str]:
        """Validate the family index."""
        if isinstance(v, int) and not 1 <= v <= 6:
            raise ValueError(f"Viscosity family must be in 1..6 or 'poisson', got {v}")
        return v

    @field_validator("coefficient_family")
    @classmethod
    def validate_coefficient_family(cls, v: Optional[int]) -> Optional[int]:
        """Validate the Poisson coefficient family index."""
        if v is not None and not 1 <= v <= 6:
            raise ValueError(f"Coefficient family must be in 1..6, got {v}")
        return v

    @field_validator("dynamic_ratio")
    @classmethod
    def validate_dynamic_ratio(cls, v: float) -> float:
        """Validate that the dynamic ratio is finite and at least 1."""
        if not math.isfinite(v) or v < 1.0:
            raise ValueError(f"Dynamic ratio must be finite and >= 1, got {v}")
        return v

    @field_validator("omega")
    @classmethod
    def validate_omega(cls, v: float) -> float:
        """Validate the steepness parameter."""
        if not math.isfinite(v) or v < 1.0:
            raise ValueError(f"omega must be finite and >= 1, got {v}")
        return v

    @field_validator("n_sinkers")
    @classmethod
    def validate_n_sinkers(cls, v: int) -> int:
        """Validate the sinker count."""
        if v < 1:
            raise ValueError(f"Number of sinkers must be >= 1, got {v}")
        return v

    @property
    def eta_high(self) -> float:
        """Return the high viscosity niveau sqrt(DR)."""
        return math.sqrt(self.dynamic_ratio)

    @property
    def eta_low(self) -> float:
        """Return the low viscosity niveau 1/sqrt(DR)."""
        return 1.0 / math.sqrt(self.dynamic_ratio)

    @property
    def is_poisson(self) -> bool:
        """Return True for the scalar validation problem."""
        return self.family == "poisson"


SinkerProblem = ProblemConfig


class CoarseningConfig(BaseModel):
    """Coarse-grid strategy and AGCA gradient threshold."""

    mode: CoarseningMode = Field(default=CoarseningMode.AGCA, description="dca, agca or gca")
    nu: float = Field(default=10.0, description="Gradient threshold for AGCA (may be .inf)")

    @field_validator("nu")
    @classmethod
    def validate_nu(cls, v: float) -> float:
        """Validate that the threshold is nonnegative."""
        if math.isnan(v) or v < 0.0:
            raise ValueError(f"nu must be >= 0, got {v}")
        return v


class VCycleConfig(BaseModel):
    """Multigrid V-cycle parameters."""

    pre_smooth: int = Field(default=2, description="Pre-smoothing steps")
    post_smooth: int = Field(default=2, description="Post-smoothing steps")
    cheby_order: int = Field(default=3, description="Chebyshev polynomial order")
    coarse_tol: float = Field(default=1.0e-8, description="Relative tolerance, coarsest solve")
    coarse_max_iter: int = Field(default=2000, description="Iteration cap of the coarsest solve")
    min_level: int = Field(default=0, description="Coarsest level of the hierarchy")
    power_iterations: int = Field(default=25, description="Power iterations for lambda_max")
    interval_lower: float = Field(default=0.125, description="Lower smoothing bound / lambda_max")
    interval_upper: float = Field(default=1.1, description="Upper smoothing bound / lambda_max")
    sor_omega: float = Field(default=1.0, description="SOR relaxation factor of the coarse solve")

    @field_validator("pre_smooth", "post_smooth", "min_level")
    @classmethod
    def validate_nonnegative(cls, v: int) -> int:
        """Validate nonnegative counts."""
        if v < 0:
            raise ValueError(f"Value must be >= 0, got {v}")
        return v

    @field_validator("cheby_order")
    @classmethod
    def validate_order(cls, v: int) -> int:
        """Validate the Chebyshev order range."""
        if not 2 <= v <= 4:
            raise ValueError(f"Chebyshev order must be in [2, 4], got {v}")
        return v

    @field_validator("coarse_tol")
    @classmethod
    def validate_coarse_tol(cls, v: float) -> float:
        """Validate the coarse tolerance."""
        if not 0.0 < v < 1.0:
            raise ValueError(f"Coarse tolerance must be in (0, 1), got {v}")
        return v

    @field_validator("sor_omega")
    @classmethod
    def validate_sor_omega(cls, v: float) -> float:
        """Validate the SOR factor."""
        if not 0.0 < v < 2.0:
            raise ValueError(f"SOR omega must be in (0, 2), got {v}")
        return v

    @model_validator(mode="after")
    def validate_interval(self) -> "VCycleConfig":
        """Validate the smoothing interval ratios."""
        if not 0.0 < self.interval_lower < self.interval_upper:
            raise ValueError(
                f"Invalid smoothing interval ratios [{self.interval_lower}, {self.interval_upper}]"
            )
        return self


class KrylovConfig(BaseModel):
    """Outer Krylov solver parameters."""

    tol: float = Field(default=1.0e-6, description="Relative residual tolerance")
    max_iter: int = Field(default=500, description="Iteration cap")
    restart: int = Field(default=30, description="FGMRES restart length")
    floor_factor: float = Field(
        default=10.0, description="Stop when ||r|| <= floor_factor * eps * ||b||"
    )

    @field_validator("tol")
    @classmethod
    def validate_tol(cls, v: float) -> float:
        """Validate that the tolerance lies in (0, 1)."""
        if not 0.0 < v < 1.0:
            raise ValueError(f"Tolerance must be in (0, 1), got {v}")
        return v

    @field_validator("max_iter", "restart")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        """Validate positive iteration counts."""
        if v < 1:
            raise ValueError(f"Value must be >= 1, got {v}")
        return v


class SolverConfig(BaseModel):
    """Solver stack: FGMRES, the velocity V-cycle and the BFBT Schur approximation."""

    krylov: KrylovConfig = Field(default_factory=KrylovConfig)
    vcycle: VCycleConfig = Field(default_factory=VCycleConfig)
    z_tol: Optional[float] = Field(
        default=None, description="Relative tolerance of the Z-solves; derived when omitted"
    )
    z_max_iter: int = Field(default=1000, description="Iteration cap of the Z-solves")
    schur_sign: SchurSign = Field(default=SchurSign.PLUS, description="Off-diagonal block sign")
    quadrature_degree: int = Field(default=2, description="Quadrature degree of the kernels")

    @field_validator("z_tol")
    @classmethod
    def validate_z_tol(cls, v: Optional[float]) -> Optional[float]:
        """Validate the inner tolerance."""
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError(f"Z tolerance must be in (0, 1), got {v}")
        return v

    @field_validator("quadrature_degree")
    @classmethod
    def validate_degree(cls, v: int) -> int:
        """Validate the kernel quadrature degree."""
        if v not in (1, 2):
            raise ValueError(f"Quadrature degree must be 1 or 2, got {v}")
        return v

    def inner_tolerance(self) -> float:
        """Return the Z-solve tolerance: explicit, or max(1e-6, tol/100)."""
        if self.z_tol is not None:
            return self.z_tol
        return max(1.0e-6, self.krylov.tol / 100.0)


class OutputConfig(BaseModel):
    """Where and what to write."""

    directory: str = Field(default="runs/latest", description="Output directory")
    write_solution: bool = Field(default=False, description="Dump velocity/pressure CSVs")
    record_timings: bool = Field(
        default=True, description="Write wall times to sweep CSVs (off for byte-identical reruns)"
    )


class SweepGrid(BaseModel):
    """Parameter grid of a convergence sweep."""

    dynamic_ratios: list[float] = Field(default_factory=lambda: [1.0, 1.0e2, 1.0e4, 1.0e6, 1.0e8])
    omegas: list[float] = Field(default_factory=lambda: [200.0])
    n_sinkers: list[int] = Field(default_factory=lambda: [1])
    eval_modes: list[EvalMode] = Field(default_factory=lambda: [EvalMode.ANALYTIC])
    coarsening_modes: list[CoarseningMode] = Field(
        default_factory=lambda: [CoarseningMode.DCA, CoarseningMode.AGCA]
    )
    cap: int = Field(default=500, description="FGMRES iteration cap per run")

    def combinations(self) -> list[tuple[float, float, int, EvalMode, CoarseningMode]]:
        """Return the cartesian product of the grid in a fixed order."""
        return list(
            itertools.product(
                self.dynamic_ratios,
                self.omegas,
                self.n_sinkers,
                self.eval_modes,
                self.coarsening_modes,
            )
        )


class NuSweepGrid(BaseModel):
    """Thresholds of a nu-sweep."""

    nus: list[float] = Field(
        default_factory=lambda: [0.1, 1.0, 10.0, 100.0, 1000.0, math.inf]
    )
    solve: bool = Field(default=True, description="Also run the Stokes solve per threshold")


class CagcaGrid(BaseModel):
    """Macro grid sizes of a c_agca study."""

    macro_sizes: list[int] = Field(default_factory=lambda: [4, 8, 16, 32])
    solve: bool = Field(default=False, description="Also run the Stokes solve per size")


class RunConfig(BaseModel):
    """Complete configuration of a run, as read from the YAML config file."""

    mesh: MeshConfig = Field(default_factory=MeshConfig)
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    coarsening: CoarseningConfig = Field(default_factory=CoarseningConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    threads: int = Field(default=1, description="Parallel sweep workers")
    sweep: Optional[SweepGrid] = None
    nu_sweep: Optional[NuSweepGrid] = None
    cagca: Optional[CagcaGrid] = None

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v: int) -> int:
        """Validate the worker count."""
        if v < 1:
            raise ValueError(f"threads must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def validate_min_level(self) -> "RunConfig":
        """Validate that the coarsest level lies below the finest."""
        if self.solver.vcycle.min_level >= self.mesh.levels:
            raise ValueError(
                f"min_level {self.solver.vcycle.min_level} must be below levels {self.mesh.levels}"
            )
        return self


class MemoryTally2D(BaseModel):
    """Measured memory of a 2D run, in stored reals and in fine-grid vectors."""

    n_dofs: int = Field(description="N_L: velocity plus pressure unknowns")
    stored_entries: int = Field(description="Reals held by the GCA store")
    stored_bytes: int = Field(description="8 bytes per stored real")
    entries_per_level: dict[int, int] = Field(default_factory=dict)
    gca_macros: int = 0
    c_agca: float = 0.0
    c_u: float = Field(description="Measured velocity fraction of N_L")
    coarse_grid_vectors: float = Field(description="stored_entries / N_L")
    fgmres_vectors: float = Field(description="(2 + 2 n_restart) per the flexible variant")
    reference: dict[str, float] = Field(
        default_factory=dict, description="2D counterparts of the 3D model constants"
    )
    measured_words: dict[str, float] = Field(
        default_factory=dict, description="CSR words / N_L of assembled operators, when measured"
    )


class MemoryModel3D(BaseModel):
    """Memory model of the 3D solver, in fine-grid vectors N_L."""

    COLUMNS: ClassVar[tuple[str, ...]] = (
        "matrix",
        "sparse_gca",
        "agca",
        "agca_stencil",
        "dca",
    )
    ROWS: ClassVar[tuple[str, ...]] = (
        "pde",
        "fgmres",
        "preconditioner",
        "fine_grid",
        "coarse_grid",
    )

    n_fill_in: float
    n_restart: int
    c_agca: float
    c_u: float
    mem_a: float = Field(description="CSR words of the fine viscous block")
    mem_k: float = Field(description="CSR words of the full Stokes operator")
    sparse_gca: float = Field(description="Sparse-matrix Galerkin coarse operators")
    elementwise_gca: float = Field(description="Element-wise Galerkin matrices at c_agca = 1")
    stencil: float = Field(description="Stencil storage at c_agca = 1")
    table: dict[str, dict[str, float]] = Field(default_factory=dict)

    def total(self, column: str) -> float:
        """Return the sum of all rows of a table column."""
        if column not in self.table:
            raise ValueError(f"Unknown column: {column}")
        return sum(self.table[column].values())


class SolveReport(BaseModel):
    """Outcome of an iterative solve."""

    method: str = Field(default="fgmres", description="Solver that produced the report")
    iterations: int = 0
    residuals: list[float] = Field(description="Residual 2-norms, entry i after i iterations")
    rhs_norm: float = 0.0
    tol: float = 0.0
    converged: bool = False
    stagnated: bool = False
    final_residual: Optional[float] = None
    seconds: float = 0.0
    timings: dict[str, float] = Field(default_factory=dict)
    c_agca: Optional[float] = None
    memory: Optional[MemoryTally2D] = None

    @field_validator("residuals")
    @classmethod
    def validate_residuals(cls, v: list[float]) -> list[float]:
        """Validate that the history is non-empty."""
        if not v:
            raise ValueError("Residual history must not be empty")
        return v

    @property
    def relative_residuals(self) -> list[float]:
        """Return the history divided by ||b|| (unscaled when b = 0)."""
        scale = self.rhs_norm if self.rhs_norm > 0.0 else 1.0
        return [r / scale for r in self.residuals]


class ExperimentResult(BaseModel):
    """One row of a sweep."""

    CSV_FIELDS: ClassVar[tuple[str, ...]] = (
        "family",
        "DR",
        "omega",
        "n_sinkers",
        "eval_mode",
        "coarsening_mode",
        "nu",
        "macro_nx",
        "L",
        "iterations",
        "converged",
        "c_agca",
        "stored_bytes",
        "seconds",
    )

    family: Union[int, str]
    dynamic_ratio: float
    omega: float
    n_sinkers: int
    eval_mode: EvalMode
    coarsening_mode: CoarseningMode
    nu: float
    macro_nx: int
    levels: int
    iterations: int = 0
    converged: bool = False
    c_agca: float = 0.0
    gca_macros: int = 0
    stored_bytes: int = 0
    seconds: float = 0.0
    error: Optional[str] = None

    @field_validator("c_agca")
    @classmethod
    def validate_c_agca(cls, v: float) -> float:
        """Validate the GCA fraction."""
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"c_agca must be in [0, 1], got {v}")
        return v

    def csv_row(self, record_timings: bool = True) -> list[str]:
        """Return the row in CSV_FIELDS order, with a fixed float format."""
        seconds = self.seconds if record_timings else 0.0
        return [
            str(self.family),
            f"{self.dynamic_ratio:.6g}",
            f"{self.omega:.6g}",
            str(self.n_sinkers),
            self.eval_mode.value,
            self.coarsening_mode.value,
            f"{self.nu:.6g}",
            str(self.macro_nx),
            str(self.levels),
            str(self.iterations),
            str(self.converged).lower(),
            f"{self.c_agca:.6f}",
            str(self.stored_bytes),
            f"{seconds:.3f}",
        ]
