import json

import pytest

from promptsearch.analysis.types import Aspect, Branch, ErrorMapping, ErrorRecord, MetaSentence, PieceKind, QuestionItem
from promptsearch.backends import ArtifactStore, CallRecorder, ChatClient, RoutedChat, TransportError
from promptsearch.backends.mock import HashImageBackend
from promptsearch.clustering import ClusterAssignment, ClusterPosterior
from promptsearch.optimizer import (
    Backends,
    CandidatePrompt,
    MergeLoss,
    NoUnresolvedErrors,
    RunConfig,
    ScoreReport,
    UnparseableRating,
    apply_iteration,
    call_budget,
    merge_candidate,
    optimize,
    propose_candidates,
    run_iteration,
    sample_cluster,
    score_prompt,
    start,
    update_memory,
)
from promptsearch.synthetic import SyntheticAgents, SyntheticT2I, baozi_task, default_profile
from promptsearch.synthetic.scene import task_from_prompt

from conftest import no_sleep, scripted_client, synthetic_backends

BAOZI = baozi_task()
SMALL = RunConfig(n_candidates=6, k_clusters=3, max_iterations=4, seed=BAOZI.seed)


def _mapping(text="Six white round baozi sit in a bamboo steamer.", index=0):
    err = ErrorRecord(Aspect.NUMBER, "Number of baozi: observed 4, expected 6", Branch.INTEGRATED, severity=3)
    return ErrorMapping(err, MetaSentence(index, text, PieceKind.OBJECT), "names the baozi")


@pytest.fixture(scope="module")
def baozi_state():
    backends = synthetic_backends(BAOZI)
    state, report = start(BAOZI.prompt, SMALL, backends)
    return state, report


def test_single_scripted_rewrite(baozi_state):
    state, _ = baozi_state
    reply = json.dumps({"candidates": ["Exactly six white round baozi sit in a bamboo steamer."]})
    cands, flagged = propose_candidates(_mapping(), state.metadata, [], 1, scripted_client([reply]))
    assert cands == ["Exactly six white round baozi sit in a bamboo steamer."] and not flagged


def test_flawed_rewrites_reasked_then_flagged(baozi_state):
    state, _ = baozi_state
    dup = json.dumps({"candidates": ["Exactly six baozi sit in a bamboo steamer."] * 2})
    chat = scripted_client([dup])
    cands, flagged = propose_candidates(_mapping(), state.metadata, [], 2, chat)
    assert flagged and len(cands) == 2
    assert chat.transport._i == 2


def test_merge_replaces_one_sentence():
    m = _mapping("A blue cup.", 1)
    chat = scripted_client([json.dumps({"prompt": "A red apple. A green cup."})])
    c = merge_candidate("A red apple. A blue cup.", "A green cup.", m, chat, cid=4)
    assert c.full_text == "A red apple. A green cup." and c.id == 4 and c.sentence_index == 1


def test_merge_identity_needs_no_call():
    chat = scripted_client(["not json"])
    c = merge_candidate("A red apple. A blue cup.", "A blue cup.", _mapping("A blue cup.", 1), chat)
    assert c.full_text == "A red apple. A blue cup."
    assert chat.transport.requests == []


def test_merge_loss_after_repair():
    chat = scripted_client([json.dumps({"prompt": "A green cup."})])
    with pytest.raises(MergeLoss):
        merge_candidate("A red apple. A blue cup.", "A green cup.", _mapping("A blue cup.", 1), chat)
    assert len(chat.transport.requests) == 2


def _rubric():
    return [QuestionItem(i, 0, Aspect.EXISTENCE, f"Question {i}?") for i in range(4)]


def _score(rate_replies, store):
    answers = json.dumps({"answers": [{"id": i, "answer": "YES"} for i in range(4)]})
    chat = ChatClient(RoutedChat({"score_vqa": [answers], "rate": rate_replies}), store=store, sleep=no_sleep)
    cand = CandidatePrompt(1, "A red apple.", "A red apple.", 0, 0, 1)
    return score_prompt(cand, "A red apple.", _rubric(), HashImageBackend(store), chat, seed=0)


def test_score_is_mean_of_item_ratings(store):
    rates = json.dumps({"ratings": [{"id": i, "rating": r} for i, r in enumerate((4, 5, 3, 4))]})
    report = _score([rates], store)
    assert report.average == 4.0
    assert [r for _, r, _ in report.per_item] == [4, 5, 3, 4]


def test_unparseable_rating(store):
    rates = json.dumps({"ratings": [{"id": i, "rating": 6} for i in range(4)]})
    with pytest.raises(UnparseableRating):
        _score([rates], store)


def _report(cid, avg, store):
    img = HashImageBackend(store).generate(str(cid), 0)
    return ScoreReport(cid, [(0, int(avg), "")], avg, img, [])


def test_sample_ties_go_to_lower_id(store):
    a = ClusterAssignment([0, 1, 1, 1], [[0], [1]], 0.0, 2)
    post = ClusterPosterior([0.5, 0.5], [0.1, 0.9], [0.1, 0.9], 1)
    reports = [_report(i, s, store) for i, s in zip((10, 11, 12, 13), (5.0, 4.0, 4.0, 3.0))]
    assert sample_cluster(a, post, reports, 2) == [11, 12]


def test_memory_elitism_and_idempotence(store):
    chat = scripted_client(["Counting words helped."])
    cand = lambda i, t: CandidatePrompt(i, t, t, 0, 0, 1)
    memory = []
    first = update_memory(memory, [(cand(1, "A."), _report(1, 4.0, store))], chat, iteration=1)
    memory.append(first)
    assert update_memory(memory, [(cand(1, "A."), _report(1, 4.0, store))], chat, iteration=2) is None
    second = update_memory(memory, [(cand(2, "B."), _report(2, 3.0, store))], chat, iteration=2)
    assert second.best_so_far == (1, 4.0)


def test_first_baozi_iteration(baozi_state):
    state, report = baozi_state
    assert 1.0 < report.average < 5.0
    backends = synthetic_backends(BAOZI)
    record = run_iteration(state, SMALL, backends)
    assert all(1.0 <= r.average <= 5.0 for r in record.reports)
    assert record.memory is not None
    for r in record.reports:
        assert r.average == pytest.approx(sum(x for _, x, _ in r.per_item) / len(r.per_item), abs=1e-9)
    import copy
    s = copy.deepcopy(state)
    apply_iteration(s, record, SMALL, backends)
    assert len(s.memory) == 1 and s.iteration == 1


class FailingT2I:
    def __init__(self, inner, bad_text):
        self.inner, self.bad_text = inner, bad_text

    def generate(self, prompt, seed):
        if prompt == self.bad_text:
            raise TransportError("simulated outage", retryable=False)
        return self.inner.generate(prompt, seed)


def test_fail_soft_drops_one_candidate(baozi_state):
    state, _ = baozi_state
    clean = run_iteration(state, SMALL, synthetic_backends(BAOZI))
    victim = clean.candidates[0]
    b = synthetic_backends(BAOZI)
    b = Backends(b.chat, FailingT2I(b.t2i, victim.full_text), b.embedder)
    record = run_iteration(state, SMALL, b)
    assert [d["stage"] for d in record.dropped if d["id"] == victim.id] == ["score"]
    assert len(record.candidates) == len(clean.candidates) - 1
    with pytest.raises(TransportError):
        run_iteration(state, RunConfig.from_dict(dict(SMALL.to_dict(), fail_soft=False)), b)


def test_error_free_prompt_is_a_fixed_point():
    task = task_from_prompt(BAOZI.prompt, seed=1, profile=default_profile(0.0))
    result, state = optimize(task.prompt, SMALL, synthetic_backends(task))
    assert result["iterations"] == 0 and result["stop_reason"] == "no_errors"
    assert result["final_prompt"] == task.prompt
    with pytest.raises(NoUnresolvedErrors):
        run_iteration(state, SMALL, synthetic_backends(task))


def test_patience_with_constant_scorer():
    store = ArtifactStore()

    def flat(request):
        return json.dumps({"ratings": [{"id": f["id"], "rating": 3} for f in request.context["findings"]]})

    chat = ChatClient(RoutedChat({"rate": flat}, fallback=SyntheticAgents(store)), store=store, sleep=no_sleep)
    backends = synthetic_backends(BAOZI, store=store)
    backends = Backends(chat, backends.t2i, backends.embedder)
    cfg = RunConfig.from_dict(dict(SMALL.to_dict(), patience=1))
    result, _ = optimize(BAOZI.prompt, cfg, backends)
    assert result["iterations"] == 2 and result["stop_reason"] == "patience"
    assert result["final_score"] == 3.0


def _events(cfg):
    out = []
    optimize(BAOZI.prompt, cfg, synthetic_backends(BAOZI), on_event=lambda k, p: out.append(json.dumps([k, p], sort_keys=True)))
    return out


def test_replay_is_identical():
    assert _events(SMALL) == _events(SMALL)


def test_elitism_and_final_prompt_was_scored():
    events = []
    result, state = optimize(BAOZI.prompt, SMALL, synthetic_backends(BAOZI), on_event=lambda k, p: events.append((k, p)))
    traj = result["best_trajectory"]
    assert traj == sorted(traj)
    scored = {BAOZI.prompt} | {c["full_text"] for k, p in events if k == "iteration" for c in p["record"]["candidates"]}
    assert result["final_prompt"] in scored


def test_call_budget_holds():
    store = ArtifactStore()
    rec = CallRecorder()
    chat = ChatClient(SyntheticAgents(store), store=store, recorder=rec, sleep=no_sleep)
    backends = Backends(chat, SyntheticT2I(store, BAOZI), synthetic_backends(BAOZI).embedder)
    seen = {}

    def on_event(kind, payload):
        if kind == "stage1_done":
            seen["stage1"] = rec.count()

    cfg = RunConfig(seed=BAOZI.seed)
    result, _ = optimize(BAOZI.prompt, cfg, backends, on_event=on_event)
    assert result["iterations"] >= 1
    assert rec.count() <= call_budget(seen["stage1"], result["iterations"], cfg.n_candidates)
