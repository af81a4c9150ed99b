from .stage1 import (
    analyze,
    answer_questions,
    caption_and_compare,
    decompose_prompt,
    detect_errors,
    generate_questions,
    integrate_errors,
    map_errors,
    parse_label,
)
from .types import (
    AnalysisError,
    Aspect,
    Branch,
    CoverageFailure,
    ErrorMapping,
    ErrorRecord,
    ErrorSet,
    IncompleteCoverage,
    MetaSentence,
    PieceKind,
    QuestionItem,
    RunMetadata,
    UnmappableError,
    UnparseableLabel,
    normalize_explanation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
