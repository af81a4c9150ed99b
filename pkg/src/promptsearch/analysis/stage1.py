"""Stage 1: prompt decomposition, question generation, two-branch error detection,
integration and mapping of errors back onto prompt pieces."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .. import templates
from ..backends.chat import ChatClient
from ..backends.types import ChatRequest, ImageRef, MalformedReply, ResponseHint
from ..textutil import chunk_sentences, classify_piece, content_set, content_words, normalize_ws
from .types import (
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
)

log = logging.getLogger(__name__)

MAX_PROMPT_CHARS = 4000


def ask(
    chat: ChatClient,
    agent: str,
    context: Dict[str, Any],
    images: Sequence[ImageRef] = (),
    hint: ResponseHint = ResponseHint.STRICT_JSON,
    extra: Sequence[str] = (),
    temperature: float = 0.0,
    **values,
):
    """Render ``agent``'s template, attach images and send it."""
    system, user = templates.render(agent, **values)
    req = ChatRequest(
        system_text=system,
        user_parts=[user, *images, *extra],
        temperature=temperature,
        max_tokens=2048,
        response_hint=hint,
        agent=agent,
        context=context,
    )
    return chat.chat(req)


def _pieces_json(pieces: Sequence[MetaSentence]) -> str:
    return json.dumps([{"index": p.index, "text": p.text, "kind": p.kind.value} for p in pieces], indent=1)


def _errors_json(records: Sequence[Tuple[str, ErrorRecord]]) -> str:
    return json.dumps(
        [{"id": rid, "type": r.category.value, "explanation": r.explanation} for rid, r in records], indent=1
    )


# -- decomposition ----------------------------------------------------------

def _parse_pieces(parsed: Dict[str, Any]) -> List[Tuple[str, Optional[str]]]:
    items = parsed.get("pieces")
    if not isinstance(items, list) or not items:
        raise MalformedReply("decompose: 'pieces' must be a non-empty list")
    out = []
    for item in items:
        if isinstance(item, str):
            text, kind = item, None
        elif isinstance(item, dict) and isinstance(item.get("text"), str):
            text, kind = item["text"], item.get("kind")
        else:
            raise MalformedReply(f"decompose: bad piece {item!r}")
        if text.strip():
            out.append((normalize_ws(text), kind))
    if not out:
        raise MalformedReply("decompose: all pieces empty")
    return out


def _kind(text: str, hint: Optional[str]) -> PieceKind:
    if hint:
        try:
            return PieceKind(str(hint).strip().capitalize())
        except ValueError:
            pass
    return PieceKind(classify_piece(text))


def _missing_words(source: str, pieces: Sequence[Tuple[str, Optional[str]]]) -> List[str]:
    covered = set()
    for text, _ in pieces:
        covered |= content_set(text)
    return [w for w in dict.fromkeys(content_words(source)) if w not in covered]


def _decompose_chunk(chunk: str, chat: ChatClient) -> List[Tuple[str, Optional[str]]]:
    ctx = {"prompt": chunk}
    pieces = _parse_pieces(ask(chat, "decompose", ctx, prompt=chunk).parsed)
    missing = _missing_words(chunk, pieces)
    if not missing:
        return pieces
    repair = (
        f"Your pieces dropped these words from the prompt: {', '.join(missing)}. "
        "Split the prompt again and keep every word."
    )
    pieces = _parse_pieces(ask(chat, "decompose", dict(ctx, missing=missing), extra=[repair], prompt=chunk).parsed)
    missing = _missing_words(chunk, pieces)
    if missing:
        raise CoverageFailure(f"decomposition drops content words: {missing}")
    return pieces


def decompose_prompt(prompt: str, chat: ChatClient, max_chars: int = MAX_PROMPT_CHARS) -> List[MetaSentence]:
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")
    raw: List[Tuple[str, Optional[str]]] = []
    for chunk in chunk_sentences(prompt, max_chars):
        raw.extend(_decompose_chunk(chunk, chat))
    return [MetaSentence(i, text, _kind(text, kind)) for i, (text, kind) in enumerate(raw)]


# -- questions ---------------------------------------------------------------

def _parse_questions(parsed: Dict[str, Any], n_pieces: int) -> List[Tuple[int, Aspect, str]]:
    items = parsed.get("questions")
    if not isinstance(items, list):
        raise MalformedReply("questions: 'questions' must be a list")
    out = []
    for item in items:
        try:
            target = int(item["target"])
            aspect = Aspect.parse(item["aspect"])
            text = str(item["question"]).strip()
        except (KeyError, TypeError, ValueError):
            log.warning("dropping malformed question item %r", item)
            continue
        if 0 <= target < n_pieces and text:
            out.append((target, aspect, text))
        else:
            log.warning("dropping question with invalid target %r", item)
    return out


def _uncovered(pieces: Sequence[MetaSentence], qs: Sequence[Tuple[int, Aspect, str]]) -> List[int]:
    targeted = {t for t, _, _ in qs}
    existence = {t for t, a, _ in qs if a is Aspect.EXISTENCE}
    bad = []
    for p in pieces:
        if p.index not in targeted or (p.kind is PieceKind.OBJECT and p.index not in existence):
            bad.append(p.index)
    return bad


def generate_questions(pieces: Sequence[MetaSentence], chat: ChatClient) -> List[QuestionItem]:
    if not pieces:
        raise ValueError("pieces must be non-empty")
    ctx = {"pieces": [p.to_dict() for p in pieces]}
    qs = _parse_questions(ask(chat, "questions", ctx, pieces=_pieces_json(pieces)).parsed, len(pieces))
    bad = _uncovered(pieces, qs)
    if bad:
        repair = (
            f"Pieces {bad} have no question (Object pieces also need an Existence question). "
            "Add the missing questions."
        )
        more = _parse_questions(
            ask(chat, "questions", dict(ctx, uncovered=bad), extra=[repair], pieces=_pieces_json(pieces)).parsed,
            len(pieces),
        )
        qs = qs + more
        bad = _uncovered(pieces, qs)
        if bad:
            raise IncompleteCoverage(f"no adequate questions for pieces {bad}")
    seen = set()
    out: List[QuestionItem] = []
    for target, aspect, text in qs:
        key = (target, normalize_ws(text).lower())
        if key in seen:
            continue
        seen.add(key)
        out.append(QuestionItem(len(out), target, aspect, text))
    return out


# -- VQA branch ----------------------------------------------------------------

_LABEL = re.compile(r"\b(YES|NO)\b")


def parse_label(reply: str) -> Tuple[bool, str]:
    """Return (answer_is_yes, explanation). The first standalone YES/NO wins."""
    upper = reply.upper()
    m = _LABEL.search(upper)
    if not m:
        raise UnparseableLabel(f"no YES/NO label in {reply[:120]!r}")
    explanation = reply[m.end():].strip(" \t\n.:,;-")
    return m.group(1) == "YES", explanation


def _answer_one(image: ImageRef, q: QuestionItem, chat: ChatClient) -> Tuple[QuestionItem, bool, str]:
    resp = ask(chat, "vqa", {"question": q.to_dict()}, images=[image], hint=ResponseHint.FREE_TEXT,
               question=q.question_text)
    yes, explanation = parse_label(resp.text)
    return q, yes, explanation


def answer_questions(image: ImageRef, questions: Sequence[QuestionItem], chat: ChatClient) -> ErrorSet:
    if not questions:
        raise ValueError("questions must be non-empty")
    workers = max(1, min(chat.max_concurrency, len(questions)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda q: _answer_one(image, q, chat), questions))
    out = ErrorSet(Branch.VQA)
    for q, yes, explanation in sorted(results, key=lambda r: r[0].id):
        if yes:
            continue
        text = explanation or f"negative answer to: {q.question_text}"
        out.add(ErrorRecord(q.aspect, text, Branch.VQA, sources=[f"q{q.id}"]))
    return out


# -- caption branch ------------------------------------------------------------

def _parse_error_list(parsed: Dict[str, Any], key: str = "errors") -> List[Dict[str, Any]]:
    items = parsed.get(key)
    if not isinstance(items, list):
        raise MalformedReply(f"expected a list under {key!r}")
    return [i for i in items if isinstance(i, dict)]


def caption_image(image: ImageRef, chat: ChatClient) -> str:
    return ask(chat, "caption", {}, images=[image], hint=ResponseHint.FREE_TEXT, temperature=0.0).text.strip()


def caption_and_compare(image: ImageRef, prompt: str, chat: ChatClient) -> ErrorSet:
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")
    caption = caption_image(image, chat)
    parsed = ask(chat, "compare", {"prompt": prompt, "caption": caption}, prompt=prompt, caption=caption).parsed
    out = ErrorSet(Branch.CAPTION)
    for i, item in enumerate(_parse_error_list(parsed)):
        try:
            category = Aspect.parse(item.get("type", ""))
        except ValueError:
            log.warning("caption comparison: unknown error type %r", item.get("type"))
            continue
        explanation = str(item.get("explanation", "")).strip()
        if explanation:
            out.add(ErrorRecord(category, explanation, Branch.CAPTION, sources=[f"cap{i}"]))
    return out


# -- integration -------------------------------------------------------------

def _severity(value: Any) -> int:
    try:
        s = int(value)
    except (TypeError, ValueError):
        return 2
    return s if 1 <= s <= 3 else 2


def integrate_errors(image: ImageRef, prompt: str, e_vqa: ErrorSet, e_c: ErrorSet, chat: ChatClient) -> ErrorSet:
    """Agent-verified union of both branches.

    Every input record ends up kept (possibly merged or rephrased, category preserved),
    or rejected with a logged reason. Records the verifier neither keeps nor rejects
    are restored verbatim.
    """
    if e_vqa.branch is not Branch.VQA or e_c.branch is not Branch.CAPTION:
        raise ValueError("integrate_errors expects (Vqa, Caption) error sets")
    inputs: Dict[str, ErrorRecord] = {}
    for i, r in enumerate(e_vqa.records):
        inputs[f"v{i}"] = r
    for i, r in enumerate(e_c.records):
        inputs[f"c{i}"] = r
    out = ErrorSet(Branch.INTEGRATED)
    if not inputs:
        return out
    listed = list(inputs.items())
    parsed = ask(
        chat,
        "integrate",
        {"prompt": prompt, "errors": [{"id": k, "type": r.category.value, "explanation": r.explanation} for k, r in listed]},
        images=[image],
        prompt=prompt,
        errors=_errors_json(listed),
    ).parsed
    accounted = set()
    for item in _parse_error_list(parsed):
        sources = [s for s in item.get("sources", []) if s in inputs] if isinstance(item.get("sources"), list) else []
        explanation = str(item.get("explanation", "")).strip()
        try:
            category = Aspect.parse(item.get("type", ""))
        except ValueError:
            category = None
        source_cats = [inputs[s].category for s in sources]
        if source_cats and category not in source_cats:
            category = source_cats[0]
        if category is None or not explanation:
            log.warning("integration: dropping unusable item %r", item)
            continue
        if not sources:
            log.info("integration: verifier added %s error: %s", category.value, explanation)
        accounted.update(sources)
        out.add(ErrorRecord(category, explanation, Branch.INTEGRATED, severity=_severity(item.get("severity")),
                            sources=sources or ["verifier"]))
    for item in parsed.get("rejected", []) or []:
        if not isinstance(item, dict):
            continue
        src = item.get("source")
        if src in inputs and src not in accounted:
            accounted.add(src)
            reason = str(item.get("reason", "")).strip() or "no reason given"
            out.rejected.append({"source": src, "explanation": inputs[src].explanation, "reason": reason})
            log.info("integration: rejected %s (%s)", src, reason)
    for src, rec in listed:
        if src not in accounted:
            log.warning("integration: verifier silently dropped %s; restoring it", src)
            restored = ErrorRecord(rec.category, rec.explanation, Branch.INTEGRATED, severity=2, sources=[src])
            if not out.add(restored):
                for r in out.records:
                    if r.key() == restored.key() and src not in r.sources:
                        r.sources.append(src)
    return out


# -- mapping -----------------------------------------------------------------

def _parse_mappings(parsed: Dict[str, Any], n_errors: int, n_pieces: int) -> Dict[int, Tuple[int, str]]:
    items = parsed.get("mappings")
    if not isinstance(items, list):
        raise MalformedReply("map: 'mappings' must be a list")
    out: Dict[int, Tuple[int, str]] = {}
    for item in items:
        try:
            e = int(item["error"])
            s = int(re.sub(r"[^0-9-]", "", str(item["sentence"])) or -1)
        except (KeyError, TypeError, ValueError):
            raise UnmappableError(f"map: unreadable mapping {item!r}") from None
        if not 0 <= e < n_errors:
            continue
        if not 0 <= s < n_pieces:
            raise UnmappableError(f"map: error {e} mapped to unknown sentence {item.get('sentence')!r}")
        out.setdefault(e, (s, str(item.get("rationale", ""))))
    missing = [i for i in range(n_errors) if i not in out]
    if missing:
        raise UnmappableError(f"map: no mapping for errors {missing}")
    return out


def map_errors(errors: ErrorSet, pieces: Sequence[MetaSentence], chat: ChatClient) -> List[ErrorMapping]:
    if not len(errors):
        raise ValueError("errors must be non-empty")
    records = list(errors.records)
    listed = [(str(i), r) for i, r in enumerate(records)]
    ctx = {"pieces": [p.to_dict() for p in pieces], "errors": [r.to_dict() for r in records]}
    values = dict(pieces=_pieces_json(pieces), errors=_errors_json(listed))
    try:
        table = _parse_mappings(ask(chat, "map", ctx, **values).parsed, len(records), len(pieces))
    except UnmappableError as exc:
        repair = f"{exc}. Use only piece indices 0..{len(pieces) - 1} and map every error."
        table = _parse_mappings(ask(chat, "map", ctx, extra=[repair], **values).parsed, len(records), len(pieces))
    out = []
    for i, rec in enumerate(records):
        s, why = table[i]
        rec.mapped_sentence = s
        out.append(ErrorMapping(rec, pieces[s], why))
    return out


# -- full stage ----------------------------------------------------------------

def detect_errors(image: ImageRef, prompt: str, questions: Sequence[QuestionItem], chat: ChatClient) -> ErrorSet:
    """Both branches in parallel, then the integration join."""
    with ThreadPoolExecutor(max_workers=2) as pool:
        f_vqa = pool.submit(answer_questions, image, questions, chat)
        f_cap = pool.submit(caption_and_compare, image, prompt, chat)
        e_vqa, e_c = f_vqa.result(), f_cap.result()
    return integrate_errors(image, prompt, e_vqa, e_c, chat)


def analyze(prompt: str, image: ImageRef, chat: ChatClient) -> RunMetadata:
    pieces = decompose_prompt(prompt, chat)
    questions = generate_questions(pieces, chat)
    e_u = detect_errors(image, prompt, questions, chat)
    mappings = map_errors(e_u, pieces, chat) if len(e_u) else []
    return RunMetadata(prompt, image, pieces, questions, e_u, mappings)
