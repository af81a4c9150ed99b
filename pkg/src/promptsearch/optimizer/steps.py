"""The individual search steps: propose, merge, score, sample, remember."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..analysis.stage1 import ask
from ..analysis.types import Aspect, ErrorMapping, PieceKind, QuestionItem, RunMetadata
from ..backends.chat import ChatClient
from ..backends.types import MalformedReply, ResponseHint
from ..clustering import ClusterAssignment, ClusterPosterior
from ..patterns import match_patterns
from ..textutil import contains_normalized, content_set, normalize_ws, split_sentences
from .types import CandidatePrompt, MemoryEntry, MergeLoss, ScoreReport, UnparseableRating

log = logging.getLogger(__name__)

MAX_STRATEGIES = 3


def build_rubric(metadata: RunMetadata) -> List[QuestionItem]:
    """Stage-1 questions plus a background item when no question covers the setting."""
    rubric = list(metadata.questions)
    if any(q.aspect is Aspect.BACKGROUND for q in rubric):
        return rubric
    bg = next((p for p in metadata.pieces if p.kind is PieceKind.BACKGROUND), None)
    if bg is not None:
        text = f"Does the background match the prompt: {bg.text.rstrip('.')}?"
        rubric.append(QuestionItem(len(rubric), bg.index, Aspect.BACKGROUND, text))
    return rubric


# -- proposal ------------------------------------------------------------------

def _strategies(mapping: ErrorMapping) -> List[Dict[str, Any]]:
    out = []
    for e in match_patterns(mapping.error)[:MAX_STRATEGIES]:
        out.append({"name": e.name, "strategy": e.strategy_text, "tactics": list(e.tactics),
                    "example": {"before": e.example_pair[0], "after": e.example_pair[1]}})
    return out


def _strategy_text(strategies: Sequence[Dict[str, Any]]) -> str:
    if not strategies:
        return "(none matched)"
    return "\n".join(f"- {s['name']}: {s['strategy']} Example: \"{s['example']['before']}\" -> "
                     f"\"{s['example']['after']}\"" for s in strategies)


def _history(memory: Sequence[MemoryEntry], limit: int) -> List[str]:
    return [m.feedback_summary for m in list(memory)[-limit:]]


def _parse_candidates(parsed: Dict[str, Any]) -> List[str]:
    items = parsed.get("candidates")
    if not isinstance(items, list):
        raise MalformedReply("refine: 'candidates' must be a list")
    out = [normalize_ws(s) for s in items if isinstance(s, str) and s.strip()]
    if not out:
        raise MalformedReply("refine: no usable candidate sentences")
    return out


def propose_candidates(
    mapping: ErrorMapping,
    metadata: RunMetadata,
    memory: Sequence[MemoryEntry],
    n: int,
    chat: ChatClient,
    sentence: Optional[str] = None,
    prompt: Optional[str] = None,
    iteration: int = 0,
    seed: int = 0,
    attempt: int = 0,
    history_limit: int = 5,
) -> Tuple[List[str], bool]:
    """``n`` rewrites of the mapped sentence, plus whether any had to be accepted flawed.

    Replies with duplicates or unchanged sentences are re-asked once; a second flawed
    reply is accepted and flagged (duplicates are removed after merging).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sentence = sentence if sentence is not None else mapping.sentence.text
    prompt = prompt if prompt is not None else metadata.original_prompt
    strategies = _strategies(mapping)
    history = _history(memory, history_limit)
    ctx = {
        "prompt": prompt,
        "sentence": sentence,
        "error": {"category": mapping.error.category.value, "explanation": mapping.error.explanation},
        "strategies": strategies,
        "history": history,
        "n": n,
        "seed": seed,
        "iteration": iteration,
        "attempt": attempt,
    }
    values = dict(n=n, prompt=prompt, sentence=sentence, category=mapping.error.category.value,
                  error=mapping.error.explanation, strategies=_strategy_text(strategies),
                  history="\n---\n".join(history) or "(no earlier attempts)")

    def flaws(cands: List[str]) -> List[str]:
        out = []
        if len(set(cands)) < len(cands):
            out.append("some rewrites are identical")
        if any(normalize_ws(c) == normalize_ws(sentence) for c in cands):
            out.append("some rewrites equal the original sentence")
        if len(cands) < n:
            out.append(f"only {len(cands)} of {n} rewrites were given")
        return out

    cands = _parse_candidates(ask(chat, "refine", ctx, temperature=0.7, **values).parsed)[:n]
    problems = flaws(cands)
    if not problems:
        return cands, False
    repair = "Problems with your rewrites: " + "; ".join(problems) + f". Give {n} distinct rewrites that all differ from the original."
    cands = _parse_candidates(ask(chat, "refine", dict(ctx, retry=True), extra=[repair], temperature=0.7,
                                  **values).parsed)[:n]
    flagged = bool(flaws(cands))
    if flagged:
        log.info("refine: accepting flawed rewrites after re-ask (%s)", "; ".join(flaws(cands)))
    return cands, flagged


# -- merge -------------------------------------------------------------------

def _lost_words(full_text: str, others: Sequence[str]) -> List[str]:
    have = content_set(full_text)
    lost: List[str] = []
    for piece in others:
        lost.extend(w for w in sorted(content_set(piece)) if w not in have)
    return lost


def merge_candidate(
    original_prompt: str,
    modified_sentence: str,
    mapping: ErrorMapping,
    chat: ChatClient,
    cid: int = 0,
    iteration: int = 0,
    mapping_index: int = 0,
    sentence: Optional[str] = None,
    pieces: Optional[Sequence[str]] = None,
    parent: Optional[int] = None,
) -> CandidatePrompt:
    """Splice ``modified_sentence`` into the prompt in place of the mapped piece."""
    if not modified_sentence or not modified_sentence.strip():
        raise ValueError("modified_sentence must be non-empty")
    sentence = sentence if sentence is not None else mapping.sentence.text
    idx = mapping.sentence.index
    if pieces is not None:
        others = [p for i, p in enumerate(pieces) if i != idx]
    else:
        others = [p for p in split_sentences(original_prompt) if normalize_ws(p) != normalize_ws(sentence)]

    def build(text: str) -> CandidatePrompt:
        return CandidatePrompt(cid, normalize_ws(text), modified_sentence, mapping_index, idx, iteration, parent)

    if normalize_ws(modified_sentence) == normalize_ws(sentence):
        return build(original_prompt)
    ctx = {"prompt": original_prompt, "sentence": sentence, "modified": modified_sentence}
    values = dict(prompt=original_prompt, sentence=sentence, modified=modified_sentence)

    def check(parsed: Dict[str, Any]) -> Tuple[Optional[str], str]:
        text = parsed.get("prompt")
        if not isinstance(text, str) or not text.strip():
            return None, "the reply has no 'prompt' text"
        if not contains_normalized(text, modified_sentence):
            return None, "the rewritten sentence is not contained verbatim"
        lost = _lost_words(text, others)
        if lost:
            return None, f"words of untouched sentences were dropped: {', '.join(lost)}"
        return text, ""

    text, problem = check(ask(chat, "merge", ctx, **values).parsed)
    if text is None:
        repair = f"Your merged prompt is wrong: {problem}. Keep the other sentences word for word."
        text, problem = check(ask(chat, "merge", dict(ctx, retry=True), extra=[repair], **values).parsed)
    if text is None:
        raise MergeLoss(f"candidate {cid}: {problem}")
    return build(text)


# -- scoring -------------------------------------------------------------------

def _questions_json(questions: Sequence[QuestionItem]) -> str:
    return json.dumps([q.to_dict() for q in questions], indent=1)


def _parse_answers(parsed: Dict[str, Any], questions: Sequence[QuestionItem]) -> Tuple[Dict[int, Tuple[str, str]], List[int]]:
    got: Dict[int, Tuple[str, str]] = {}
    items = parsed.get("answers")
    if isinstance(items, list):
        for item in items:
            try:
                qid = int(item["id"])
                answer = str(item["answer"]).strip().upper()
            except (KeyError, TypeError, ValueError):
                continue
            label = "YES" if answer.startswith("YES") else "NO" if answer.startswith("NO") else None
            if label is not None:
                got.setdefault(qid, (label, str(item.get("explanation", "") or "").strip()))
    missing = [q.id for q in questions if q.id not in got]
    return got, missing


def _parse_ratings(parsed: Dict[str, Any], ids: Sequence[int]) -> Tuple[Dict[int, Tuple[int, str]], List[int]]:
    got: Dict[int, Tuple[int, str]] = {}
    items = parsed.get("ratings")
    if isinstance(items, list):
        for item in items:
            if not isinstance(item, dict):
                continue
            try:
                qid = int(item["id"])
            except (KeyError, TypeError, ValueError):
                continue
            r = item.get("rating")
            if isinstance(r, bool) or not isinstance(r, (int, float, str)):
                continue
            try:
                value = float(r)
            except ValueError:
                continue
            if value.is_integer() and 1 <= value <= 5:
                got.setdefault(qid, (int(value), str(item.get("note", "") or "")))
    bad = [i for i in ids if i not in got]
    return got, bad


def score_prompt(
    candidate: CandidatePrompt,
    original_prompt: str,
    questions: Sequence[QuestionItem],
    t2i,
    chat: ChatClient,
    seed: int,
) -> ScoreReport:
    """Generate the candidate's image and rate it item by item against the rubric."""
    if not questions:
        raise ValueError("questions must be non-empty")
    image = t2i.generate(candidate.full_text, seed)
    q_ctx = {"prompt": original_prompt, "questions": [q.to_dict() for q in questions]}
    values = dict(prompt=original_prompt, questions=_questions_json(questions))
    answers, missing = _parse_answers(ask(chat, "score_vqa", q_ctx, images=[image], **values).parsed, questions)
    if missing:
        repair = f"You did not answer questions {missing}. Answer every question with YES or NO."
        more, missing = _parse_answers(ask(chat, "score_vqa", q_ctx, images=[image], extra=[repair], **values).parsed,
                                       questions)
        answers = {**more, **answers}
        missing = [q.id for q in questions if q.id not in answers]
        if missing:
            raise MalformedReply(f"score_vqa: no answer for questions {missing}")
    findings = [{"id": q.id, "aspect": q.aspect.value, "answer": answers[q.id][0], "explanation": answers[q.id][1]}
                for q in questions]
    r_ctx = {"prompt": original_prompt, "findings": findings}
    r_values = dict(prompt=original_prompt, findings=json.dumps(findings, indent=1))
    ids = [q.id for q in questions]
    ratings, bad = _parse_ratings(ask(chat, "rate", r_ctx, images=[image], **r_values).parsed, ids)
    if bad:
        repair = f"Ratings for items {bad} are missing or not integers from 1 to 5. Rate every item."
        more, _ = _parse_ratings(ask(chat, "rate", r_ctx, images=[image], extra=[repair], **r_values).parsed, ids)
        ratings = {**more, **ratings}
        bad = [i for i in ids if i not in ratings]
        if bad:
            raise UnparseableRating(f"rate: unusable ratings for items {bad}")
    per_item = [(i, ratings[i][0], ratings[i][1]) for i in ids]
    average = math.fsum(r for _, r, _ in per_item) / len(per_item)
    return ScoreReport(candidate.id, per_item, average, image, findings)


# -- selection -------------------------------------------------------------------

def rank_ids(ids: Sequence[int], scores: Dict[int, float]) -> List[int]:
    return sorted(ids, key=lambda i: (-scores[i], i))


def sample_cluster(
    assignment: ClusterAssignment,
    posterior: ClusterPosterior,
    reports: Sequence[ScoreReport],
    m: int,
    seed: int = 0,
) -> List[int]:
    """Top-``m`` members of the selected cluster by score, ties to the lower id.

    ``reports`` is aligned with the clustered points. Selection is deterministic, so
    ``seed`` is accepted for interface stability only.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    members = assignment.members(posterior.best)
    if not members:
        raise ValueError(f"cluster {posterior.best} is empty")
    scores = {reports[i].candidate: reports[i].average for i in members}
    return rank_ids(list(scores), scores)[:m]


# -- memory ------------------------------------------------------------------

def _entry_hash(texts: Sequence[str], scores: Sequence[float], summary: str) -> str:
    blob = json.dumps([list(texts), list(scores), summary], sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def update_memory(
    memory: List[MemoryEntry],
    s_star: Sequence[Tuple[CandidatePrompt, ScoreReport]],
    chat: ChatClient,
    iteration: int = 0,
    target: Optional[ErrorMapping] = None,
) -> Optional[MemoryEntry]:
    """Summarize the sampled set and append it; returns the entry or None for a duplicate."""
    if not s_star:
        raise ValueError("s_star must be non-empty")
    attempts = [{"prompt": c.full_text, "score": r.average, "errors": r.errors()} for c, r in s_star]
    tgt = ({"category": target.error.category.value, "explanation": target.error.explanation}
           if target is not None else {"category": "", "explanation": "(all remaining errors)"})
    resp = ask(chat, "summarize", {"target": tgt, "attempts": attempts}, hint=ResponseHint.FREE_TEXT,
               target=f"[{tgt['category']}] {tgt['explanation']}", attempts=json.dumps(attempts, indent=1))
    summary = resp.text.strip()
    if not summary:
        raise MalformedReply("summarize: empty summary")
    texts = [c.full_text for c, _ in s_star]
    scores = [r.average for _, r in s_star]
    digest = _entry_hash(texts, scores, summary)
    if any(m.content_hash == digest for m in memory):
        log.info("memory: identical entry already stored, skipping")
        return None
    top_c, top_r = max(s_star, key=lambda cr: (cr[1].average, -cr[0].id))
    best = (top_c.id, top_r.average)
    if memory and memory[-1].best_so_far[1] >= best[1]:
        best = memory[-1].best_so_far
    entry = MemoryEntry(iteration, [c.id for c, _ in s_star], [r.image for _, r in s_star], scores, summary,
                        best, texts, digest)
    memory.append(entry)
    return entry
