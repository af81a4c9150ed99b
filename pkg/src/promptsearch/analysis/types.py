from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from ..backends.types import ImageRef


class AnalysisError(Exception):
    pass


class CoverageFailure(AnalysisError):
    pass


class IncompleteCoverage(AnalysisError):
    pass


class UnparseableLabel(AnalysisError):
    pass


class UnmappableError(AnalysisError):
    pass


class Aspect(str, Enum):
    EXISTENCE = "Existence"
    COLOR = "Color"
    NUMBER = "Number"
    SHAPE = "Shape"
    STATE = "State"
    TEXTURE = "Texture"
    RELATION = "Relation"
    POSITION = "Position"
    BACKGROUND = "Background"
    STYLE = "Style"

    @classmethod
    def parse(cls, value: str) -> "Aspect":
        key = str(value).strip().lower()
        for a in cls:
            if a.value.lower() == key:
                return a
        aliases = {"count": cls.NUMBER, "quantity": cls.NUMBER, "colour": cls.COLOR,
                   "spatial": cls.POSITION, "object": cls.EXISTENCE, "missing": cls.EXISTENCE,
                   "attribute": cls.STATE, "material": cls.TEXTURE}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown aspect {value!r}")


class PieceKind(str, Enum):
    OBJECT = "Object"
    RELATIONSHIP = "Relationship"
    BACKGROUND = "Background"


class Branch(str, Enum):
    VQA = "Vqa"
    CAPTION = "Caption"
    INTEGRATED = "Integrated"


def normalize_explanation(text: str) -> str:
    """Lowercase alphanumerics only; the exact-duplicate key for error records."""
    return re.sub(r"[^a-z0-9]", "", text.lower())


@dataclass
class MetaSentence:
    index: int
    text: str
    kind: PieceKind

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "text": self.text, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetaSentence":
        return cls(int(d["index"]), d["text"], PieceKind(d["kind"]))


@dataclass
class QuestionItem:
    id: int
    target: int
    aspect: Aspect
    question_text: str

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "target": self.target, "aspect": self.aspect.value, "question": self.question_text}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "QuestionItem":
        return cls(int(d["id"]), int(d["target"]), Aspect(d["aspect"]), d["question"])


@dataclass
class ErrorRecord:
    category: Aspect
    explanation: str
    branch: Branch
    mapped_sentence: Optional[int] = None
    severity: int = 2
    sources: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.explanation or not self.explanation.strip():
            raise ValueError("ErrorRecord.explanation must be non-empty")
        if not 1 <= self.severity <= 3:
            raise ValueError("severity must be 1..3")

    def key(self):
        return (self.category, normalize_explanation(self.explanation))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category": self.category.value,
            "explanation": self.explanation,
            "branch": self.branch.value,
            "mapped_sentence": self.mapped_sentence,
            "severity": self.severity,
            "sources": list(self.sources),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ErrorRecord":
        return cls(
            category=Aspect(d["category"]),
            explanation=d["explanation"],
            branch=Branch(d["branch"]),
            mapped_sentence=d.get("mapped_sentence"),
            severity=int(d.get("severity", 2)),
            sources=list(d.get("sources", [])),
        )


@dataclass
class ErrorSet:
    branch: Branch
    records: List[ErrorRecord] = field(default_factory=list)
    # integration only: input records the verifier rejected, with reasons
    rejected: List[Dict[str, str]] = field(default_factory=list)

    def add(self, record: ErrorRecord) -> bool:
        """Append unless an exact duplicate is present; returns whether it was added."""
        if record.branch is not self.branch:
            raise ValueError(f"{record.branch.value} record in {self.branch.value} set")
        if any(r.key() == record.key() for r in self.records):
            return False
        self.records.append(record)
        return True

    @classmethod
    def of(cls, branch: Branch, records: Iterable[ErrorRecord]) -> "ErrorSet":
        out = cls(branch)
        for r in records:
            out.add(r)
        return out

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def categories(self) -> List[Aspect]:
        return [r.category for r in self.records]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "branch": self.branch.value,
            "records": [r.to_dict() for r in self.records],
            "rejected": list(self.rejected),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ErrorSet":
        return cls(Branch(d["branch"]), [ErrorRecord.from_dict(r) for r in d["records"]], list(d.get("rejected", [])))


@dataclass
class ErrorMapping:
    error: ErrorRecord
    sentence: MetaSentence
    rationale: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.error.to_dict(), "sentence": self.sentence.index, "rationale": self.rationale}

    @classmethod
    def from_dict(cls, d: Dict[str, Any], pieces: List[MetaSentence]) -> "ErrorMapping":
        return cls(ErrorRecord.from_dict(d["error"]), pieces[int(d["sentence"])], d.get("rationale", ""))


@dataclass
class RunMetadata:
    original_prompt: str
    original_image: ImageRef
    pieces: List[MetaSentence]
    questions: List[QuestionItem]
    error_set: ErrorSet
    mappings: List[ErrorMapping]
    history: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        if self.error_set.branch is not Branch.INTEGRATED:
            raise ValueError("RunMetadata.error_set must be the integrated set")

    @property
    def consistent(self) -> bool:
        return len(self.error_set) == 0

    def append_history(self, summary: Dict[str, Any]) -> None:
        self.history.append(dict(summary))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "original_prompt": self.original_prompt,
            "original_image": self.original_image.to_dict(),
            "pieces": [p.to_dict() for p in self.pieces],
            "questions": [q.to_dict() for q in self.questions],
            "error_set": self.error_set.to_dict(),
            "mappings": [m.to_dict() for m in self.mappings],
            "history": list(self.history),
            "consistent": self.consistent,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunMetadata":
        pieces = [MetaSentence.from_dict(p) for p in d["pieces"]]
        return cls(
            original_prompt=d["original_prompt"],
            original_image=ImageRef.from_dict(d["original_image"]),
            pieces=pieces,
            questions=[QuestionItem.from_dict(q) for q in d["questions"]],
            error_set=ErrorSet.from_dict(d["error_set"]),
            mappings=[ErrorMapping.from_dict(m, pieces) for m in d["mappings"]],
            history=list(d.get("history", [])),
        )
