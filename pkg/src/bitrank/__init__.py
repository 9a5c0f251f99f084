"""Joint bit-width and adapter-rank search under a hard memory budget.

The package searches a per-layer discrete space (quantization bits,
adapter rank) for the best-scoring configuration that fits a byte
budget.  A global evolutionary phase with successive-halving fidelity
management and a cheap screening surrogate builds a Pareto archive;
a trust-region refinement phase with a Gaussian process then polishes
the incumbent under a scalarized utility.
"""

from .baselines import (
    OracleTable,
    RandomSearchResult,
    SpaceTooLargeError,
    brute_force_oracle,
    random_search,
)
from .context import SearchContext
from .evaluator import (
    BackendFailure,
    EvalRecord,
    EvalRequest,
    EvaluationError,
    ExternalBackend,
    Ledger,
    LedgerConflictError,
    SyntheticBackend,
    SyntheticLatent,
    evaluate,
    evaluate_batch,
    synthetic_importance,
    synthetic_score,
)
from .evolve import EvolutionParams, EvolutionResult, ShaSchedule, run_evolutionary_search
from .feasibility import (
    Budget,
    BudgetError,
    LadderBoundError,
    RepairStats,
    RepairTrace,
    greedy_fill,
    repair,
)
from .gp import GpGrid, GpModel, expected_improvement, fit_gp, matern52
from .importance import (
    ImportanceProfile,
    ProbeSample,
    normalize_importance,
    profile_from_probe,
    uniform_profile,
)
from .multiobjective import (
    ParetoArchive,
    SelectionItem,
    dominates,
    fast_nondominated_fronts,
    hypervolume_2d,
    hypervolume_stalled,
    nsga2_select,
)
from .pipeline import RunManifest, run_refinement_from, run_search
from .refine import (
    RefinementParams,
    RefinementResult,
    TrustRegion,
    UtilitySpec,
    run_trust_region_refinement,
)
from .reporting import emit_reports
from .space import (
    Config,
    Ladder,
    Ladders,
    LayerCatalog,
    LayerSpec,
    MemoryPolicy,
    ModelSpecError,
    SearchSpace,
    atomic_distance,
    default_ladders,
    embed,
    load_model_spec,
    load_search_space,
    total_memory,
)
from .surrogate import ScreeningSurrogate, fit_screening_surrogate, surrogate_features

__version__ = "0.1.0"

__all__ = [
    "BackendFailure",
    "Budget",
    "BudgetError",
    "Config",
    "EvalRecord",
    "EvalRequest",
    "EvaluationError",
    "EvolutionParams",
    "EvolutionResult",
    "ExternalBackend",
    "GpGrid",
    "GpModel",
    "ImportanceProfile",
    "Ladder",
    "LadderBoundError",
    "Ladders",
    "LayerCatalog",
    "LayerSpec",
    "Ledger",
    "LedgerConflictError",
    "MemoryPolicy",
    "ModelSpecError",
    "OracleTable",
    "ParetoArchive",
    "ProbeSample",
    "RandomSearchResult",
    "RefinementParams",
    "RefinementResult",
    "RepairStats",
    "RepairTrace",
    "RunManifest",
    "ScreeningSurrogate",
    "SearchContext",
    "SearchSpace",
    "SelectionItem",
    "ShaSchedule",
    "SpaceTooLargeError",
    "SyntheticBackend",
    "SyntheticLatent",
    "TrustRegion",
    "UtilitySpec",
    "atomic_distance",
    "brute_force_oracle",
    "default_ladders",
    "dominates",
    "embed",
    "emit_reports",
    "evaluate",
    "evaluate_batch",
    "expected_improvement",
    "fast_nondominated_fronts",
    "fit_gp",
    "fit_screening_surrogate",
    "greedy_fill",
    "hypervolume_2d",
    "hypervolume_stalled",
    "load_model_spec",
    "load_search_space",
    "matern52",
    "normalize_importance",
    "nsga2_select",
    "profile_from_probe",
    "random_search",
    "repair",
    "run_evolutionary_search",
    "run_refinement_from",
    "run_search",
    "run_trust_region_refinement",
    "surrogate_features",
    "synthetic_importance",
    "synthetic_score",
    "total_memory",
    "uniform_profile",
]
