import csv
import json
from pathlib import Path

import pytest

from promptsearch.cli.main import main
from promptsearch.cli.config import ConfigError, load_settings
from promptsearch.cli.main import UsageError, read_prompts
from promptsearch.cli.runlog import CorruptLog, read_log, resume_point, trajectory_lines
from promptsearch.synthetic import BAOZI_PROMPT

FAST = ["--candidates", "6", "--clusters", "3", "--max-iterations", "3"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os
    for k in list(os.environ):
        if k.startswith("PROMPTSEARCH_"):
            monkeypatch.delenv(k)


def _prompt_file(tmp_path, lines):
    p = tmp_path / "prompts.txt"
    p.write_text("\n".join(lines) + "\n")
    return str(p)


def test_optimize_happy_path(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["optimize", "--prompt", BAOZI_PROMPT, "--out", str(out), "--seed", "7", *FAST])
    assert code == 0
    final = json.loads((out / "final.json").read_text())
    assert final["final_prompt"] in capsys.readouterr().out
    assert json.loads((out / "metadata.json").read_text())["original_prompt"] == BAOZI_PROMPT
    assert final["chat_calls"] <= final["call_budget"]
    header, events, _ = read_log(out / "run.jsonl")
    assert header["prompt"] == BAOZI_PROMPT and events[-1]["type"] == "final"
    # second fresh run into the same directory is refused
    assert main(["optimize", "--prompt", BAOZI_PROMPT, "--out", str(out)]) == 2


def test_usage_errors(tmp_path, capsys):
    assert main(["optimize", "--bogus"]) == 2
    assert main(["optimize", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--tasks", "0"]) == 2
    assert main(["export"]) == 2


def test_multi_prompt_jsonl(tmp_path):
    lines = [json.dumps({"id": "a", "prompt": "A red apple sits on a wooden table."}),
             json.dumps({"id": "b", "prompt": BAOZI_PROMPT})]
    out = tmp_path / "many"
    assert main(["optimize", "--prompt-file", _prompt_file(tmp_path, lines), "--out", str(out), *FAST]) == 0
    summary = json.loads((out / "final.json").read_text())
    assert sorted(summary) == ["a", "b"]
    assert (out / "a" / "run.jsonl").exists() and (out / "b" / "final.json").exists()


def test_read_prompts(tmp_path):
    assert read_prompts(_prompt_file(tmp_path, ["# note", "One cat.", "Two dogs."])) == [("p000", "One cat."), ("p001", "Two dogs.")]
    dup = [json.dumps({"id": "x", "prompt": "One cat."})] * 2
    with pytest.raises(UsageError):
        read_prompts(_prompt_file(tmp_path, dup))
    with pytest.raises(UsageError):
        read_prompts(_prompt_file(tmp_path, ['{"id": "x"}']))


def test_simulate_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--tasks", "3", "--out", str(a), *FAST]) == 0
    assert main(["simulate", "--tasks", "3", "--out", str(b), *FAST]) == 0
    assert (a / "simulate.json").read_text() == (b / "simulate.json").read_text()
    for run in sorted(p.parent.name for p in a.glob("*/run.jsonl")):
        assert trajectory_lines(a / run) == trajectory_lines(b / run)
    assert "median=" in capsys.readouterr().out


def test_simulate_refuses_http(tmp_path):
    assert main(["simulate", "--backend", "http", "--tasks", "1"]) == 2


def test_resume_of_finished_run_is_noop(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["optimize", "--prompt", BAOZI_PROMPT, "--out", str(out), *FAST]) == 0
    before = (out / "run.jsonl").read_bytes()
    assert main(["optimize", "--resume", "--out", str(out)]) == 0
    assert (out / "run.jsonl").read_bytes() == before
    assert "nothing to resume" in capsys.readouterr().err


def test_truncated_tail_dropped_and_corrupt_middle_rejected(tmp_path):
    out = tmp_path / "run"
    assert main(["optimize", "--prompt", BAOZI_PROMPT, "--out", str(out), *FAST]) == 0
    lines = (out / "run.jsonl").read_text().splitlines()
    path = out / "run.jsonl"
    path.write_text("\n".join(lines[:3]) + "\n" + lines[3][:40])
    _, events, _ = read_log(path)
    assert len(events) == 2
    path.write_text("\n".join(lines[:2] + ["{not json"] + lines[3:]) + "\n")
    with pytest.raises(CorruptLog):
        read_log(path)
    assert main(["optimize", "--resume", "--out", str(out)]) == 1


def test_export_csv(tmp_path):
    out = tmp_path / "run"
    assert main(["optimize", "--prompt", BAOZI_PROMPT, "--out", str(out), "--seed", "7", *FAST]) == 0
    assert main(["export", "--out", str(out), "--csv", str(tmp_path / "a.csv")]) == 0
    assert main(["export", "--out", str(out), "--csv", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    its = [e for e in read_log(out / "run.jsonl")[1] if e["type"] == "iteration"]
    assert len(rows) == sum(len(e["record"]["candidates"]) for e in its)
    for e in its:
        flags = [r for r in rows if int(r["iteration"]) == e["record"]["iteration"] and r["sampled"] == "1"]
        assert len(flags) == len(e["record"]["sampled"])
    assert all(r["cluster"] != "" and 0 <= float(r["posterior"]) <= 1 for r in rows)


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("backend: mock\npipeline:\n  n_candidates: 10\n  patience: 4\n")
    s = load_settings(str(cfg), environ={})
    assert s.run_config().n_candidates == 10
    s = load_settings(str(cfg), environ={"PROMPTSEARCH_PIPELINE_N_CANDIDATES": "12"})
    assert s.run_config().n_candidates == 12 and s.run_config().patience == 4
    assert s.run_config(n_candidates=14).n_candidates == 14
    bad = tmp_path / "bad.yaml"
    bad.write_text("colour: red\n")
    with pytest.raises(ConfigError):
        load_settings(str(bad), environ={})
    with pytest.raises(ConfigError):
        load_settings(str(cfg), environ={"PROMPTSEARCH_PIPELINE_N_CANDIDATES": "0"}).run_config()


def test_no_secret_in_run_artifacts(tmp_path, monkeypatch):
    secret = "sk-test-0123456789abcdef"
    monkeypatch.setenv("PS_TEST_KEY", secret)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "backend: http\n"
        "chat: {base_url: 'http://127.0.0.1:9', model_name: m, api_key_env: PS_TEST_KEY, retry: {max_attempts: 1}}\n"
        "t2i: {base_url: 'http://127.0.0.1:9', model_name: m, api_key_env: PS_TEST_KEY, retry: {max_attempts: 1}}\n"
        "embed: {base_url: 'http://127.0.0.1:9', model_name: m, api_key_env: PS_TEST_KEY}\n")
    out = tmp_path / "run"
    code = main(["optimize", "--config", str(cfg), "--prompt", "One red apple.", "--out", str(out)])
    assert code == 1  # nothing listens on the port
    files = [p for p in out.rglob("*") if p.is_file()]
    assert files
    for p in files:
        assert secret.encode() not in p.read_bytes()
    header, _, _ = read_log(out / "run.jsonl")
    assert header["settings"]["chat"]["api_key_env"] == "PS_TEST_KEY"
