"""Stage 2: iterative prompt search over rewrites of the error-bearing sentences."""
from .loop import Backends, SearchState, apply_iteration, call_budget, final_result, optimize, run_iteration, same_error, start
from .steps import build_rubric, merge_candidate, propose_candidates, sample_cluster, score_prompt, update_memory
from .baselines import METHODS, best_of_n, random_rewrite, run_method
from .types import (
    CandidatePrompt,
    IterationFailed,
    IterationRecord,
    MemoryEntry,
    MergeLoss,
    NoUnresolvedErrors,
    OptimizerError,
    RunConfig,
    ScoreReport,
    UnparseableRating,
)

__all__ = [name for name in dir() if not name.startswith("_")]
