"""In-process stand-ins for every agent role and for the T2I model.

The agents read the structured ``ChatRequest.context`` and answer in the same reply
formats the templates ask real models for, so replies go through the production
parsing paths unchanged.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..analysis.types import Aspect, QuestionItem
from ..backends.mock import placeholder_png
from ..backends.store import ArtifactStore, text_hash
from ..backends.types import ChatRequest, ChatResponse, ImageRef, Provenance, TransportError
from ..textutil import classify_piece, split_sentences
from . import lexicon as lx
from .grammar import parse_prompt, tokenize
from .oracle import (
    UnsupportedAspect,
    caption_scene,
    compare_caption,
    defect_key,
    questions_for_piece,
    rate_finding,
    vqa_reply,
)
from .scene import SceneSpec, SyntheticTask, render_scene, task_from_prompt
from .tactics import Target, add_filler, apply_tactic, applicable

SEVERITY = {
    "Existence": 3, "Number": 3,
    "Color": 2, "Shape": 2, "Texture": 2, "State": 2, "Relation": 2, "Position": 2,
    "Background": 1, "Style": 1,
}
_STILL_WRONG = re.compile(r"\[(\w+)\] ([^|]+)")


def _rng(*parts) -> random.Random:
    blob = json.dumps(list(parts), sort_keys=True)
    return random.Random(int(hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16], 16))


def scene_png(scene: SceneSpec) -> bytes:
    cells: List[Tuple[int, int, int]] = []
    for o in scene.objects:
        cells.extend([lx.RGB.get(o.color or "", lx.DEFAULT_RGB)] * o.count)
        cells.append((255, 255, 255))
    if scene.background:
        shade = 40 + 20 * lx.BACKGROUNDS.index(scene.background)
        cells.append((shade, shade, 255 - shade))
    return placeholder_png(cells)


class SyntheticT2I:
    """Mock T2I: renders prompts into scenes and stores them with a placeholder PNG."""

    backend_id = "synthetic-t2i"

    def __init__(self, store: ArtifactStore, task: Optional[SyntheticTask] = None):
        self.store = store
        self.task = task

    def render(self, prompt: str, seed: int) -> SceneSpec:
        task = self.task
        if task is None:
            task = task_from_prompt(prompt, seed)
        return render_scene(prompt, task, seed)

    def generate(self, prompt: str, seed: int) -> ImageRef:
        scene = self.render(prompt, seed)
        scene_id = self.store.put_scene(scene.to_dict())
        return self.store.put_image(scene_png(scene), "image/png", Provenance.SYNTHETIC,
                                    prompt_id=text_hash(prompt)[:16], scene_id=scene_id)


def ordered_nouns(text: str) -> List[str]:
    return list(dict.fromkeys(lx.singular(t) for t in tokenize(text) if lx.singular(t)))


def target_from_error(category: str, explanation: str, sentence: str) -> Optional[Target]:
    nouns = ordered_nouns(explanation)
    if category == "Background":
        return Target("background")
    if not nouns:
        return None
    if category == "Number":
        return Target("count", nouns[0])
    if category == "Existence":
        low = explanation.lower()
        return Target("exclusion" if ("unwanted" in low or "exclude" in low) else "exist", nouns[0])
    if category in ("Color", "Shape", "Texture", "State"):
        return Target(category.lower(), nouns[0])
    if category in ("Relation", "Position") and len(nouns) >= 2:
        rel = parse_prompt(sentence, require_noun=False).relation_map()
        a, b = nouns[0], nouns[1]
        if (a, b) not in rel and (b, a) in rel:
            a, b = b, a
        return Target("relation", a, b)
    return None


class SyntheticAgents:
    """Chat transport answering every agent role from scenes and the grammar."""

    backend_id = "synthetic-agents"

    def __init__(self, store: ArtifactStore):
        self.store = store

    def complete(self, request: ChatRequest) -> ChatResponse:
        handler = getattr(self, f"_{request.agent}", None)
        if handler is None:
            raise TransportError(f"synthetic agents: no role {request.agent!r}", retryable=False)
        try:
            reply = handler(request.context, request)
        except UnsupportedAspect as exc:
            raise TransportError(f"synthetic agents: {exc}", retryable=False) from None
        text = reply if isinstance(reply, str) else json.dumps(reply, sort_keys=True)
        return ChatResponse(text=text, usage=(0, 0), backend_id=self.backend_id)

    def _scene(self, request: ChatRequest) -> SceneSpec:
        images = request.images()
        if not images or not images[0].scene_id:
            raise TransportError("synthetic agents need a synthetic image", retryable=False)
        return SceneSpec.from_dict(self.store.get_scene(images[0].scene_id))

    # -- stage 1 ------------------------------------------------------------

    def _decompose(self, ctx, request):
        pieces = split_sentences(ctx["prompt"])
        return {"pieces": [{"text": p, "kind": classify_piece(p)} for p in pieces]}

    def _questions(self, ctx, request):
        seen: set = set()
        out = []
        for piece in ctx["pieces"]:
            for aspect, q in questions_for_piece(piece["text"], seen):
                out.append({"target": piece["index"], "aspect": aspect, "question": q})
        return {"questions": out}

    def _vqa(self, ctx, request):
        return vqa_reply(self._scene(request), QuestionItem.from_dict(ctx["question"]))

    def _caption(self, ctx, request):
        return caption_scene(self._scene(request))

    def _compare(self, ctx, request):
        return {"errors": compare_caption(ctx["prompt"], ctx["caption"])}

    def _integrate(self, ctx, request):
        groups: Dict[Any, List[Dict[str, str]]] = {}
        for e in ctx["errors"]:
            groups.setdefault(defect_key(e["type"], e["explanation"]), []).append(e)
        errors = []
        for (category, _), members in groups.items():
            # prefer the question-answering wording: it states observed vs expected
            lead = next((m for m in members if m["id"].startswith("v")), members[0])
            errors.append({
                "type": category,
                "explanation": lead["explanation"],
                "severity": SEVERITY.get(category, 2),
                "sources": [m["id"] for m in members],
            })
        return {"errors": errors, "rejected": []}

    def _map(self, ctx, request):
        pieces = ctx["pieces"]
        out = []
        for i, err in enumerate(ctx["errors"]):
            nouns = set(ordered_nouns(err["explanation"]))
            best, best_score = 0, -1
            for p in pieces:
                toks = tokenize(p["text"])
                named = {lx.singular(t) for t in toks if lx.singular(t)}
                score = len(nouns & named)
                if err["category"] == "Background":
                    score = int(any(t in lx.BACKGROUNDS for t in toks))
                if score > best_score:
                    best, best_score = p["index"], score
            out.append({"error": i, "sentence": best, "rationale": f"piece names {sorted(nouns) or 'the setting'}"})
        return {"mappings": out}

    # -- stage 2 ------------------------------------------------------------

    def _refine(self, ctx, request):
        sentence = ctx["sentence"]
        err = ctx["error"]
        n = int(ctx["n"])
        target = target_from_error(err["category"], err["explanation"], sentence)
        rng = _rng("refine", ctx.get("seed", 0), ctx.get("iteration", 0), sentence, err["explanation"],
                   bool(ctx.get("retry")))
        names: List[str] = []
        for s in ctx.get("strategies", []):
            names.extend(s.get("tactics", []))
        if target is not None:
            names = [t for t in dict.fromkeys(names) if t in applicable(target.kind)]
            if not names:
                names = list(applicable(target.kind))
        # errors the memory says are still open in this sentence
        secondary = []
        for summary in ctx.get("history", [])[-1:]:
            for cat, expl in _STILL_WRONG.findall(summary):
                t = target_from_error(cat, expl.strip(), sentence)
                if t is not None and t != target and all(v is None or v in _sentence_nouns(sentence)
                                                         for v in (t.noun, t.other)):
                    secondary.append(t)
        depth = 1 + int(ctx.get("attempt", 0))
        out = []
        for j in range(n):
            s = sentence
            if target is not None and names:
                k = rng.randint(1, min(len(names), depth))
                for name in rng.sample(names, k):
                    s = apply_tactic(s, target, name, rng)
            for t in secondary:
                if rng.random() < 0.5:
                    s = apply_tactic(s, t, rng.choice(applicable(t.kind)), rng)
            if s == sentence or rng.random() < 0.5:
                s = add_filler(s, rng)
            out.append(s)
        return {"candidates": out}

    def _merge(self, ctx, request):
        prompt, old, new = ctx["prompt"], ctx["sentence"], ctx["modified"]
        if old in prompt:
            return {"prompt": prompt.replace(old, new, 1)}
        norm = " ".join(prompt.split())
        return {"prompt": norm.replace(" ".join(old.split()), new, 1)}

    def _score_vqa(self, ctx, request):
        scene = self._scene(request)
        answers = []
        for q in ctx["questions"]:
            reply = vqa_reply(scene, QuestionItem.from_dict(q))
            yes = reply.startswith("YES")
            answers.append({"id": q["id"], "answer": "YES" if yes else "NO",
                            "explanation": "" if yes else reply[3:].strip()})
        return {"answers": answers}

    def _rate(self, ctx, request):
        ratings = []
        for f in ctx["findings"]:
            ratings.append({"id": f["id"], "rating": rate_finding(f["aspect"], f["answer"], f["explanation"]),
                            "note": f["explanation"] or "satisfied"})
        return {"ratings": ratings}

    def _summarize(self, ctx, request):
        attempts = ctx["attempts"]
        best = max(attempts, key=lambda a: a["score"])
        lines = [f"Tried {len(attempts)} rewrites for: {ctx['target']['explanation']}",
                 f"Best attempt scored {best['score']:.2f}."]
        if best["errors"]:
            lines.append("Still wrong: " + " | ".join(f"[{e['category']}] {e['explanation']}" for e in best["errors"]))
            lines.append("Next: add stronger emphasis to the remaining items.")
        else:
            lines.append("All checks passed in the best attempt.")
        return "\n".join(lines)


def _sentence_nouns(sentence: str) -> set:
    return {lx.singular(t) for t in tokenize(sentence) if lx.singular(t)}
