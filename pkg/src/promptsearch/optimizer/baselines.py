"""Reference searches for comparison.

random-rewrite: each round rephrases a random sentence of the best prompt so far with
a neutral filler phrase, scores the rewrites with the same rubric and keeps the best.
No error analysis, clustering or memory is used; the candidate budget matches the
full method.

best-of-N: the full method with clustering replaced by plain top-m selection
(``RunConfig(selection="topk")``).
"""
from __future__ import annotations

import random
from dataclasses import replace
from typing import Any, Dict, List, Optional, Tuple

from ..textutil import split_sentences
from .loop import Backends, EventSink, optimize, start
from .steps import rank_ids, score_prompt
from .types import CandidatePrompt, RunConfig

# phrases with no bearing on what a prompt asks for
NEUTRAL_PHRASES = (
    "shown with care",
    "with gentle framing",
    "as a calm composition",
    "seen from eye level",
    "with a soft focus feel",
    "as a quiet still life",
    "drawn with a steady hand",
    "with balanced framing",
)


def neutral_rephrase(sentence: str, rng: random.Random) -> str:
    """Swap (or add) a trailing neutral phrase."""
    s = sentence.rstrip()
    end = s[-1] if s and s[-1] in ".!?;" else "."
    body = s[:-1].rstrip() if s and s[-1] in ".!?;" else s
    for p in NEUTRAL_PHRASES:
        if body.endswith(", " + p):
            body = body[: -len(p) - 2]
            break
    return f"{body}, {rng.choice(NEUTRAL_PHRASES)}{end}"


def random_rewrite(prompt: str, config: RunConfig, backends: Backends,
                   on_event: Optional[EventSink] = None) -> Dict[str, Any]:
    emit = on_event or (lambda kind, payload: None)
    state, report = start(prompt, config, backends)
    rng = random.Random(f"random-rewrite:{config.seed}")
    best_text, best_score = prompt, report.average
    trajectory: List[float] = []
    stall, iterations, next_id = 0, 0, 1
    if state.stop_reason is None:
        for it in range(1, config.max_iterations + 1):
            iterations = it
            pieces = split_sentences(best_text)
            texts = []
            for _ in range(config.n_candidates):
                i = rng.randrange(len(pieces))
                new = list(pieces)
                new[i] = neutral_rephrase(pieces[i], rng)
                texts.append((new[i], " ".join(new)))
            scores: Dict[int, float] = {}
            full: Dict[int, str] = {}
            for sentence, text in dict((t, (s, t)) for s, t in texts).values():
                cand = CandidatePrompt(next_id, text, sentence, -1, -1, it)
                scores[next_id] = score_prompt(cand, prompt, state.rubric, backends.t2i, backends.chat,
                                               config.seed).average
                full[next_id] = text
                next_id += 1
            top = rank_ids(list(scores), scores)[0]
            improved = scores[top] > best_score
            if improved:
                best_text, best_score = full[top], scores[top]
            trajectory.append(best_score)
            emit("iteration", {"iteration": it, "best_score": best_score, "candidates": len(scores)})
            stall = 0 if improved else stall + 1
            if best_score >= config.score_target or stall >= config.patience:
                break
    result = {"original_prompt": prompt, "final_prompt": best_text, "final_score": best_score,
              "iterations": iterations, "best_trajectory": trajectory}
    emit("final", result)
    return result


def best_of_n(prompt: str, config: RunConfig, backends: Backends,
              on_event: Optional[EventSink] = None) -> Dict[str, Any]:
    result, _ = optimize(prompt, replace(config, selection="topk"), backends, on_event=on_event)
    return result


METHODS = ("full", "random-rewrite", "best-of-n")


def run_method(name: str, prompt: str, config: RunConfig, backends: Backends,
               on_event: Optional[EventSink] = None) -> Dict[str, Any]:
    if name == "full":
        return optimize(prompt, config, backends, on_event=on_event)[0]
    if name == "random-rewrite":
        return random_rewrite(prompt, config, backends, on_event)
    if name == "best-of-n":
        return best_of_n(prompt, config, backends, on_event)
    raise ValueError(f"unknown method {name!r}; choose from {METHODS}")
