"""Records passed between the search steps and persisted in run logs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from ..backends.types import ImageRef
from ..textutil import contains_normalized


class OptimizerError(Exception):
    pass


class MergeLoss(OptimizerError):
    """The merged prompt dropped content of pieces that were not being rewritten."""


class UnparseableRating(OptimizerError):
    pass


class NoUnresolvedErrors(OptimizerError):
    pass


class IterationFailed(OptimizerError):
    """Every candidate of an iteration failed; nothing was written."""


SELECTIONS = ("cluster", "topk")


@dataclass
class RunConfig:
    n_candidates: int = 20
    k_clusters: int = 5
    max_iterations: int = 10
    m_samples: int = 3
    score_target: float = 5.0
    patience: int = 3
    seed: int = 0
    fail_soft: bool = True
    # "topk" skips clustering and samples the m best candidates (best-of-N baseline)
    selection: str = "cluster"
    history_limit: int = 5
    embed_dim: int = 64

    def __post_init__(self):
        for name in ("n_candidates", "k_clusters", "max_iterations", "m_samples", "patience", "history_limit"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.m_samples > self.n_candidates:
            raise ValueError("m_samples must not exceed n_candidates")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class CandidatePrompt:
    id: int
    full_text: str
    modified_sentence: str
    mapping: int  # index into the run's mapping list
    sentence_index: int
    iteration: int
    parent: Optional[int] = None
    flagged: bool = False

    def __post_init__(self):
        if not self.full_text or not self.full_text.strip():
            raise ValueError("full_text must be non-empty")
        if not contains_normalized(self.full_text, self.modified_sentence):
            raise ValueError("modified_sentence must occur in full_text")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CandidatePrompt":
        return cls(**d)


@dataclass
class ScoreReport:
    candidate: int
    per_item: List[Tuple[int, int, str]]
    average: float
    image: ImageRef
    # the question-answering findings the ratings were based on
    findings: List[Dict[str, Any]] = field(default_factory=list)

    def errors(self) -> List[Dict[str, str]]:
        return [{"category": f["aspect"], "explanation": f["explanation"]}
                for f in self.findings if f["answer"] != "YES"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "candidate": self.candidate,
            "per_item": [list(x) for x in self.per_item],
            "average": self.average,
            "image": self.image.to_dict(),
            "findings": list(self.findings),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScoreReport":
        return cls(int(d["candidate"]), [tuple(x) for x in d["per_item"]], float(d["average"]),
                   ImageRef.from_dict(d["image"]), list(d.get("findings", [])))


@dataclass
class MemoryEntry:
    iteration: int
    sampled_prompts: List[int]
    images: List[ImageRef]
    scores: List[float]
    feedback_summary: str
    best_so_far: Tuple[int, float]
    texts: List[str] = field(default_factory=list)
    content_hash: str = ""

    def __post_init__(self):
        if not (len(self.sampled_prompts) == len(self.images) == len(self.scores)):
            raise ValueError("sampled prompts, images and scores must be length-aligned")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "sampled_prompts": list(self.sampled_prompts),
            "images": [i.to_dict() for i in self.images],
            "scores": list(self.scores),
            "feedback_summary": self.feedback_summary,
            "best_so_far": list(self.best_so_far),
            "texts": list(self.texts),
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MemoryEntry":
        return cls(int(d["iteration"]), list(d["sampled_prompts"]), [ImageRef.from_dict(i) for i in d["images"]],
                   [float(s) for s in d["scores"]], d["feedback_summary"],
                   (int(d["best_so_far"][0]), float(d["best_so_far"][1])), list(d.get("texts", [])),
                   d.get("content_hash", ""))


@dataclass
class IterationRecord:
    iteration: int
    target: int  # mapping index being worked on
    candidates: List[CandidatePrompt]
    reports: List[ScoreReport]
    dropped: List[Dict[str, Any]]
    embeddings: List[List[float]]
    assignment: Optional[Dict[str, Any]]
    posterior: Optional[Dict[str, Any]]
    sampled: List[int]
    memory: Optional[MemoryEntry]
    advanced: bool
    working_score: float
    best_so_far: Tuple[int, float]
    flagged: bool = False
    # posterior and centroids handed to the next round as its prior
    carried: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "target": self.target,
            "candidates": [c.to_dict() for c in self.candidates],
            "reports": [r.to_dict() for r in self.reports],
            "dropped": list(self.dropped),
            "embeddings": [list(e) for e in self.embeddings],
            "assignment": self.assignment,
            "posterior": self.posterior,
            "sampled": list(self.sampled),
            "memory": self.memory.to_dict() if self.memory else None,
            "advanced": self.advanced,
            "working_score": self.working_score,
            "best_so_far": list(self.best_so_far),
            "flagged": self.flagged,
            "carried": self.carried,
        }
