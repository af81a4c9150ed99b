"""The search loop: one target error at a time, N rewrites per round, cluster-guided
selection, memory feedback, and resolution checks against fresh error analyses."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from ..analysis.stage1 import analyze, detect_errors, map_errors
from ..analysis.types import Branch, ErrorMapping, ErrorRecord, ErrorSet, MetaSentence, QuestionItem, RunMetadata
from ..backends.chat import ChatClient
from ..backends.types import BackendError
from ..clustering import (
    ClusterPosterior,
    bayesian_update,
    carry_prior_forward,
    compute_likelihoods,
    kmeans_fit,
    uniform_prior,
)
from ..textutil import content_set
from .steps import build_rubric, merge_candidate, propose_candidates, rank_ids, sample_cluster, score_prompt, update_memory
from .types import (
    CandidatePrompt,
    IterationFailed,
    IterationRecord,
    MemoryEntry,
    NoUnresolvedErrors,
    OptimizerError,
    RunConfig,
    ScoreReport,
)

log = logging.getLogger(__name__)

EventSink = Callable[[str, Dict[str, Any]], None]
SAME_ERROR_OVERLAP = 0.5


@dataclass
class Backends:
    chat: ChatClient
    t2i: Any
    embedder: Any


@dataclass
class SearchState:
    metadata: RunMetadata
    rubric: List[QuestionItem]
    mappings: List[ErrorMapping]
    queue: List[int]
    pieces: List[str]
    working_prompt: str
    working_score: float
    working_candidate: Optional[int] = None
    resolved: List[int] = field(default_factory=list)
    attempts: Dict[int, int] = field(default_factory=dict)
    memory: List[MemoryEntry] = field(default_factory=list)
    # posterior and centroids of the previous round, reused as a prior while the target is unchanged
    carried: Optional[Dict[str, Any]] = None
    iteration: int = 0
    stall: int = 0
    next_id: int = 1
    stop_reason: Optional[str] = None

    @property
    def best_so_far(self) -> Optional[Tuple[int, float]]:
        return self.memory[-1].best_so_far if self.memory else None

    def current_pieces(self) -> List[MetaSentence]:
        return [MetaSentence(p.index, self.pieces[p.index], p.kind) for p in self.metadata.pieces]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metadata": self.metadata.to_dict(),
            "rubric": [q.to_dict() for q in self.rubric],
            "mappings": [m.to_dict() for m in self.mappings],
            "queue": list(self.queue),
            "pieces": list(self.pieces),
            "working_prompt": self.working_prompt,
            "working_score": self.working_score,
            "working_candidate": self.working_candidate,
            "resolved": list(self.resolved),
            "attempts": {str(k): v for k, v in sorted(self.attempts.items())},
            "memory": [m.to_dict() for m in self.memory],
            "carried": self.carried,
            "iteration": self.iteration,
            "stall": self.stall,
            "next_id": self.next_id,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SearchState":
        metadata = RunMetadata.from_dict(d["metadata"])
        return cls(
            metadata=metadata,
            rubric=[QuestionItem.from_dict(q) for q in d["rubric"]],
            mappings=[ErrorMapping.from_dict(m, metadata.pieces) for m in d["mappings"]],
            queue=list(d["queue"]),
            pieces=list(d["pieces"]),
            working_prompt=d["working_prompt"],
            working_score=float(d["working_score"]),
            working_candidate=d.get("working_candidate"),
            resolved=list(d.get("resolved", [])),
            attempts={int(k): int(v) for k, v in d.get("attempts", {}).items()},
            memory=[MemoryEntry.from_dict(m) for m in d.get("memory", [])],
            carried=d.get("carried"),
            iteration=int(d.get("iteration", 0)),
            stall=int(d.get("stall", 0)),
            next_id=int(d.get("next_id", 1)),
            stop_reason=d.get("stop_reason"),
        )


def _order(queue: Sequence[int], mappings: Sequence[ErrorMapping]) -> List[int]:
    return sorted(dict.fromkeys(queue), key=lambda i: (-mappings[i].error.severity, i))


def _cluster_seed(seed: int, iteration: int) -> int:
    return (seed * 1_000_003 + iteration) % (1 << 32)


def same_error(a: ErrorRecord, b: ErrorRecord) -> bool:
    """Same category and mostly the same content words (Jaccard >= 0.5)."""
    if a.category is not b.category:
        return False
    wa, wb = content_set(a.explanation), content_set(b.explanation)
    if not wa or not wb:
        return wa == wb
    return len(wa & wb) / len(wa | wb) >= SAME_ERROR_OVERLAP


def _fan_out(fn, items: Sequence, workers: int, fail_soft: bool) -> List[Tuple[Any, Any, Optional[Exception]]]:
    """Apply ``fn`` concurrently; results keep input order."""
    def guarded(item):
        try:
            return item, fn(item), None
        except (BackendError, OptimizerError) as exc:
            if not fail_soft:
                raise
            return item, None, exc

    if not items:
        return []
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(items)))) as pool:
        return list(pool.map(guarded, items))


# -- one round -----------------------------------------------------------------

def run_iteration(state: SearchState, config: RunConfig, backends: Backends) -> IterationRecord:
    """One propose/merge/score/cluster/sample/remember round for the first queued error.

    ``state`` is read, never modified; :func:`apply_iteration` commits the result.
    """
    if not state.queue:
        raise NoUnresolvedErrors("no unresolved error mappings")
    chat = backends.chat
    iteration = state.iteration + 1
    target = state.queue[0]
    mapping = state.mappings[target]
    idx = mapping.sentence.index
    sentence = state.pieces[idx]

    rewrites, flagged = propose_candidates(
        mapping, state.metadata, state.memory, config.n_candidates, chat,
        sentence=sentence, prompt=state.working_prompt, iteration=iteration, seed=config.seed,
        attempt=state.attempts.get(target, 0), history_limit=config.history_limit,
    )
    numbered = list(enumerate(rewrites, start=state.next_id))
    dropped: List[Dict[str, Any]] = []

    merged = _fan_out(
        lambda it: merge_candidate(state.working_prompt, it[1], mapping, chat, cid=it[0], iteration=iteration,
                                   mapping_index=target, sentence=sentence, pieces=state.pieces,
                                   parent=state.working_candidate),
        numbered, chat.max_concurrency, config.fail_soft)
    candidates: List[CandidatePrompt] = []
    seen_texts = set()
    for (cid, text), cand, exc in merged:
        if exc is not None:
            log.warning("candidate %d dropped at merge: %s", cid, exc)
            dropped.append({"id": cid, "stage": "merge", "reason": str(exc)})
        elif cand.full_text in seen_texts:
            dropped.append({"id": cid, "stage": "dedup", "reason": "duplicate prompt"})
        else:
            seen_texts.add(cand.full_text)
            candidates.append(cand)

    scored = _fan_out(
        lambda c: score_prompt(c, state.metadata.original_prompt, state.rubric, backends.t2i, chat, config.seed),
        candidates, chat.max_concurrency, config.fail_soft)
    kept: List[CandidatePrompt] = []
    reports: List[ScoreReport] = []
    for cand, report, exc in scored:
        if exc is not None:
            log.warning("candidate %d dropped at scoring: %s", cand.id, exc)
            dropped.append({"id": cand.id, "stage": "score", "reason": str(exc)})
        else:
            kept.append(cand)
            reports.append(report)
    if not kept:
        raise IterationFailed(f"iteration {iteration}: every candidate failed")

    vectors = backends.embedder.embed([c.modified_sentence for c in kept])
    embeddings = [list(v.values) for v in vectors]
    scores = {r.candidate: r.average for r in reports}
    assignment = posterior = None
    carried = None
    if config.selection == "cluster":
        assignment = kmeans_fit(embeddings, config.k_clusters, _cluster_seed(config.seed, iteration))
        likelihoods = compute_likelihoods(assignment, [r.average for r in reports])
        prev = state.carried
        if prev is not None and prev["target"] == target:
            prior = carry_prior_forward(ClusterPosterior.from_dict(prev["posterior"]), prev["centroids"],
                                        assignment.centroids)
        else:
            prior = uniform_prior(assignment.k_effective)
        posterior = bayesian_update(prior, likelihoods)
        sampled = sample_cluster(assignment, posterior, reports, config.m_samples, config.seed)
        carried = {"target": target, "posterior": posterior.to_dict(), "centroids": assignment.centroids}
    else:
        sampled = rank_ids(list(scores), scores)[: config.m_samples]

    by_id = {c.id: (c, r) for c, r in zip(kept, reports)}
    memory = list(state.memory)
    entry = update_memory(memory, [by_id[i] for i in sampled], chat, iteration=iteration, target=mapping)
    best_sampled = max(scores[i] for i in sampled)
    best = memory[-1].best_so_far if memory else (sampled[0], best_sampled)
    record = IterationRecord(
        iteration=iteration, target=target, candidates=kept, reports=reports, dropped=dropped,
        embeddings=embeddings,
        assignment=assignment.to_dict() if assignment else None,
        posterior=posterior.to_dict() if posterior else None,
        sampled=sampled, memory=entry, advanced=best_sampled > state.working_score,
        working_score=max(state.working_score, best_sampled), best_so_far=best, flagged=flagged,
        carried=carried,
    )
    return record


def apply_iteration(state: SearchState, record: IterationRecord, config: RunConfig, backends: Backends) -> None:
    """Commit a finished round: memory, working prompt, error resolution, stop checks."""
    before = state.best_so_far
    if record.memory is not None:
        state.memory.append(record.memory)
    state.carried = record.carried
    state.iteration = record.iteration
    state.next_id = max([state.next_id] + [c.id + 1 for c in record.candidates] + [d["id"] + 1 for d in record.dropped])
    target = record.target
    state.attempts[target] = state.attempts.get(target, 0) + 1

    scores = {r.candidate: r for r in record.reports}
    top = rank_ids(record.sampled, {i: scores[i].average for i in record.sampled})[0]
    if record.advanced:
        cand = next(c for c in record.candidates if c.id == top)
        state.working_prompt = cand.full_text
        state.working_score = scores[top].average
        state.working_candidate = cand.id
        state.pieces[cand.sentence_index] = cand.modified_sentence
        _recheck_errors(state, scores[top], target, config, backends)

    after = state.best_so_far
    improved = after is not None and (before is None or after[1] > before[1])
    state.stall = 0 if improved else state.stall + 1
    if not state.queue:
        state.stop_reason = "resolved"
    elif state.iteration >= config.max_iterations:
        state.stop_reason = "max_iterations"
    elif state.stall >= config.patience:
        state.stop_reason = "patience"


def _recheck_errors(state: SearchState, report: ScoreReport, target: int, config: RunConfig,
                    backends: Backends) -> None:
    """Fresh analysis of the new working image: drop fixed errors, refresh open ones, add new ones."""
    if report.average >= config.score_target and target in state.queue:
        state.queue.remove(target)
        state.resolved.append(target)
    fresh = detect_errors(report.image, state.metadata.original_prompt, state.metadata.questions, backends.chat)
    unmatched = list(fresh.records)
    for i in list(state.queue):
        hit = next((r for r in unmatched if same_error(r, state.mappings[i].error)), None)
        if hit is None:
            state.queue.remove(i)
            state.resolved.append(i)
            continue
        unmatched.remove(hit)
        old = state.mappings[i]
        hit.mapped_sentence = old.sentence.index
        state.mappings[i] = ErrorMapping(hit, old.sentence, old.rationale)
    # errors already resolved once are not reopened by a near-identical report
    unmatched = [r for r in unmatched if not any(same_error(r, state.mappings[j].error) for j in state.resolved)]
    if unmatched:
        new = map_errors(ErrorSet.of(Branch.INTEGRATED, unmatched), state.current_pieces(), backends.chat)
        for m in new:
            state.mappings.append(ErrorMapping(m.error, state.metadata.pieces[m.sentence.index], m.rationale))
            state.queue.append(len(state.mappings) - 1)
    state.queue = _order(state.queue, state.mappings)


# -- call accounting ----------------------------------------------------------

# Upper bounds on chat calls per unit, re-asks included.
PROPOSE_CALLS = 2  # refine, plus one repair re-ask
MERGE_CALLS = 2
SCORE_CALLS = 4  # score_vqa and rate, each with one re-ask
SUMMARY_CALLS = 1


def call_budget(stage1_calls: int, iterations: int, n_candidates: int) -> int:
    """Most chat calls a run may make after ``stage1_calls`` analysis calls.

    Proposal is charged per candidate slot although it is one call per round; the
    slack pays for the fresh error analysis that follows an advance.
    """
    per_round = n_candidates * (PROPOSE_CALLS + MERGE_CALLS) + n_candidates * SCORE_CALLS + SUMMARY_CALLS
    return stage1_calls + iterations * per_round


# -- full run --------------------------------------------------------------------

def start(prompt: str, config: RunConfig, backends: Backends) -> Tuple[SearchState, ScoreReport]:
    """Stage 1 plus the rubric score of the unmodified prompt."""
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")
    image = backends.t2i.generate(prompt, config.seed)
    metadata = analyze(prompt, image, backends.chat)
    rubric = build_rubric(metadata)
    base = CandidatePrompt(0, prompt, prompt, -1, -1, 0)
    report = score_prompt(base, prompt, rubric, backends.t2i, backends.chat, config.seed)
    mappings = list(metadata.mappings)
    state = SearchState(
        metadata=metadata, rubric=rubric, mappings=mappings, queue=_order(range(len(mappings)), mappings),
        pieces=[p.text for p in metadata.pieces], working_prompt=prompt, working_score=report.average,
    )
    if not state.queue:
        state.stop_reason = "no_errors"
    return state, report


def final_result(state: SearchState) -> Dict[str, Any]:
    best = state.best_so_far
    return {
        "original_prompt": state.metadata.original_prompt,
        "final_prompt": state.working_prompt,
        "final_score": state.working_score,
        "final_candidate": state.working_candidate,
        "best_so_far": list(best) if best else None,
        "iterations": state.iteration,
        "stop_reason": state.stop_reason,
        "resolved": [state.mappings[i].error.to_dict() for i in state.resolved],
        "unresolved": [state.mappings[i].error.to_dict() for i in state.queue],
        "best_trajectory": [m.best_so_far[1] for m in state.memory],
    }


def optimize(
    prompt: str,
    config: RunConfig,
    backends: Backends,
    on_event: Optional[EventSink] = None,
    state: Optional[SearchState] = None,
) -> Tuple[Dict[str, Any], SearchState]:
    """Run (or, given ``state``, continue) a search; returns the final result and state.

    Events: ``stage1_done``, then per round ``memory_append`` (when memory grew) and
    ``iteration`` (carrying the committed state), then ``final``.
    """
    emit = on_event or (lambda kind, payload: None)
    if state is None:
        state, report = start(prompt, config, backends)
        emit("stage1_done", {"original_report": report.to_dict(), "state": state.to_dict()})
    while state.stop_reason is None:
        record = run_iteration(state, config, backends)
        apply_iteration(state, record, config, backends)
        if record.memory is not None:
            emit("memory_append", {"iteration": record.iteration, "entry": record.memory.to_dict()})
        emit("iteration", {"record": record.to_dict(), "state": state.to_dict()})
        log.info("iteration %d: target %d, best sampled %.3f, working %.3f%s", record.iteration, record.target,
                 max(r.average for r in record.reports if r.candidate in record.sampled), state.working_score,
                 " (advanced)" if record.advanced else "")
    result = final_result(state)
    emit("final", result)
    return result, state
