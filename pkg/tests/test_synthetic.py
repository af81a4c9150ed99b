import random

import pytest

from promptsearch.analysis.types import Aspect, QuestionItem
from promptsearch.backends import ArtifactStore
from promptsearch.synthetic import (
    BAOZI_PROMPT,
    GrammarError,
    SceneSpec,
    SyntheticT2I,
    SyntheticTask,
    baozi_task,
    caption_scene,
    constraints,
    corruption_probability,
    defect_key,
    full_mitigation,
    generate_tasks,
    intended_scene,
    mock_vqa_answer,
    parse_prompt,
    render_scene,
)
from promptsearch.synthetic.tactics import neutral_rewrite
from promptsearch.synthetic.tasks import FOCI
from promptsearch.textutil import split_sentences


def test_parse_baozi():
    p = parse_prompt(BAOZI_PROMPT)
    assert p.objects() == ["baozi", "steamer", "table"]
    scene = intended_scene(p)
    assert scene.count_of("baozi") == 6
    assert scene.relation("baozi", "steamer") == "in"
    assert scene.background == "kitchen"


def test_parse_exclusion_and_rejects_nonsense():
    p = parse_prompt("A red apple sits on a table. There is no cat.")
    assert p.excluded() == ["cat"]
    with pytest.raises(GrammarError):
        parse_prompt("Quantum flux harmonizes.")


def test_render_is_deterministic_and_seeded():
    t = baozi_task()
    a = render_scene(t.prompt, t, t.seed)
    assert a.to_dict() == render_scene(t.prompt, t, t.seed).to_dict()
    assert a.count_of("baozi") == 4
    assert SceneSpec.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_mitigation_removes_defects():
    t = baozi_task()
    fixed = full_mitigation(t.prompt)
    assert "exactly" in fixed or "precisely" in fixed
    scene = render_scene(fixed, t, t.seed)
    assert scene.to_dict() == t.ground_truth.to_dict()


def test_neutral_filler_does_not_move_probabilities():
    t = baozi_task()
    first, *rest = split_sentences(t.prompt)
    for s in range(5):
        other = " ".join([neutral_rewrite(first, random.Random(s))] + rest)
        assert other != t.prompt
        for c in constraints(parse_prompt(t.prompt)):
            assert corruption_probability(other, t, c.id) == corruption_probability(t.prompt, t, c.id)


def test_task_set_covers_every_focus():
    tasks = generate_tasks(12, 0)
    assert set(t.focus for t in tasks) == set(FOCI)
    assert len({t.id for t in tasks}) == 12
    # every task is reachable: some rewrite renders it defect-free
    for t in tasks:
        assert render_scene(full_mitigation(t.prompt), t, t.seed).to_dict() == t.ground_truth.to_dict()
    again = generate_tasks(12, 0)
    assert [t.to_dict() for t in again] == [t.to_dict() for t in tasks]
    assert SyntheticTask.from_dict(tasks[0].to_dict()).to_dict() == tasks[0].to_dict()


def test_vqa_oracle_answers_from_scene():
    t = baozi_task()
    scene = render_scene(t.prompt, t, t.seed)
    ok, why = mock_vqa_answer(scene, QuestionItem(0, 0, Aspect.NUMBER, "Are there exactly six baozi in the image?"))
    assert not ok and "observed 4, expected 6" in why
    ok, _ = mock_vqa_answer(scene, QuestionItem(1, 1, Aspect.EXISTENCE, "Is there at least one table in the image?"))
    assert ok
    assert "four" in caption_scene(scene)


def test_defect_key_ignores_wording():
    a = defect_key("Number", "Number of baozi: observed 4, expected 6")
    b = defect_key("Number", "Only four baozi are described instead of six.")
    assert a == b


def test_mock_t2i_images_carry_scene():
    store = ArtifactStore()
    t = baozi_task()
    img = SyntheticT2I(store, t).generate(t.prompt, t.seed)
    assert img == SyntheticT2I(store, t).generate(t.prompt, t.seed)
    assert store.read(img)[:8] == b"\x89PNG\r\n\x1a\n"
    scene = SceneSpec.from_dict(store.get_scene(img.scene_id))
    assert scene.count_of("baozi") == 4
