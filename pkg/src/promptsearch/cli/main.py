"""Command-line entry point: analyze, optimize, simulate, bench, export."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..analysis.stage1 import analyze
from ..analysis.types import AnalysisError
from ..backends import ArtifactStore, BackendError, CallRecorder
from ..optimizer import METHODS, OptimizerError, RunConfig, SearchState, call_budget, optimize, run_method
from ..synthetic import GrammarError, generate_tasks
from .config import ConfigError, Settings, build_backends, load_settings
from .export import export_clusters
from .runlog import CorruptLog, EmptyRun, RunLog, read_log, resume_point

log = logging.getLogger("promptsearch")

PIPELINE_FAILURES = (BackendError, AnalysisError, OptimizerError, GrammarError, CorruptLog, EmptyRun,
                     ValueError, OSError)


class UsageError(Exception):
    pass


# -- prompt ingestion ----------------------------------------------------------

def read_prompts(path: str) -> List[Tuple[str, str]]:
    """(id, prompt) pairs from plain text (one per line) or JSONL with {id, prompt}."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            try:
                rec = json.loads(line)
                pid, prompt = str(rec.get("id", f"p{len(out):03d}")), rec["prompt"]
            except (ValueError, KeyError, TypeError):
                raise UsageError(f"{path}:{n + 1}: expected JSON with a 'prompt' field") from None
        else:
            pid, prompt = f"p{len(out):03d}", line
        if not str(prompt).strip():
            raise UsageError(f"{path}:{n + 1}: empty prompt")
        out.append((pid, str(prompt)))
    if not out:
        raise UsageError(f"{path}: no prompts")
    ids = [p for p, _ in out]
    if len(set(ids)) != len(ids):
        raise UsageError(f"{path}: duplicate prompt ids")
    return out


def _prompts(args) -> List[Tuple[str, str]]:
    if args.prompt and args.prompt_file:
        raise UsageError("give either --prompt or --prompt-file, not both")
    if args.prompt:
        return [("p000", args.prompt)]
    if args.prompt_file:
        try:
            return read_prompts(args.prompt_file)
        except OSError as exc:
            raise UsageError(f"cannot read prompt file: {exc}") from None
    raise UsageError("a prompt is required (--prompt or --prompt-file)")


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_config(settings: Settings, args, seed: Optional[int] = None) -> RunConfig:
    return settings.run_config(
        seed=args.seed if seed is None else seed,
        max_iterations=args.max_iterations, n_candidates=args.candidates,
        k_clusters=args.clusters, m_samples=args.samples,
    )


# -- optimize ------------------------------------------------------------------

def optimize_into(run_dir: Path, prompt: str, settings: Settings, config: RunConfig, task=None) -> Dict[str, Any]:
    """Fresh run with a persisted log, metadata and final result in ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    header = {"prompt": prompt, "config": config.to_dict(), "settings": settings.snapshot(),
              "task": task.to_dict() if task is not None else None}
    runlog = RunLog.create(run_dir, header)
    return _drive(run_dir, runlog, prompt, settings, config, task, None)


def resume_into(run_dir: Path, settings: Settings) -> Optional[Dict[str, Any]]:
    """Continue an unfinished run; returns None (with a notice) if it already finished."""
    header, kept, checkpoint, finalized = resume_point(run_dir)
    if finalized:
        print(f"{run_dir}: run already finished; nothing to resume", file=sys.stderr)
        return None
    config = RunConfig.from_dict(header["config"])
    # the run keeps the backend kind it started with
    settings.backend = (header.get("settings") or {}).get("backend", settings.backend)
    task = None
    if header.get("task"):
        from ..synthetic import SyntheticTask
        task = SyntheticTask.from_dict(header["task"])
    state = SearchState.from_dict(checkpoint["state"]) if checkpoint else None
    runlog = RunLog(run_dir / "run.jsonl", next_seq=len(kept))
    return _drive(run_dir, runlog, header["prompt"], settings, config, task, state)


def _drive(run_dir: Path, runlog: RunLog, prompt: str, settings: Settings, config: RunConfig, task,
           state: Optional[SearchState]) -> Dict[str, Any]:
    store = ArtifactStore(run_dir)
    recorder = CallRecorder(run_dir / "calls.jsonl")
    backends = build_backends(settings, store, recorder, task=task, embed_dim=config.embed_dim)

    def on_event(kind: str, payload: Dict[str, Any]) -> None:
        if kind == "stage1_done":
            payload["stage1_calls"] = recorder.count()
        runlog.event(kind, payload)
        if kind == "stage1_done":
            _write_json(run_dir / "metadata.json", payload["state"]["metadata"])

    result, _ = optimize(prompt, config, backends, on_event=on_event, state=state)
    _, events, _ = read_log(run_dir / "run.jsonl")
    stage1 = next(e["stage1_calls"] for e in events if e["type"] == "stage1_done")
    calls = run_dir / "calls.jsonl"
    result["chat_calls"] = len(calls.read_text(encoding="utf-8").splitlines()) if calls.exists() else 0
    result["call_budget"] = call_budget(stage1, result["iterations"], config.n_candidates)
    _write_json(run_dir / "final.json", result)
    return result


def cmd_optimize(args, settings: Settings) -> int:
    out = Path(args.out) if args.out else None
    if args.resume:
        if out is None:
            raise UsageError("--resume needs --out pointing at the run directory")
        dirs = [out] if (out / "run.jsonl").exists() else sorted(p.parent for p in out.glob("*/run.jsonl"))
        if not dirs:
            raise UsageError(f"no run log under {out}")
        for d in dirs:
            result = resume_into(d, settings)
            if result is not None:
                _report(d.name, result)
        return 0
    prompts = _prompts(args)
    config = _run_config(settings, args)
    if out is None:
        raise UsageError("optimize needs --out")
    if len(prompts) == 1:
        _report(prompts[0][0], optimize_into(out, prompts[0][1], settings, config))
        return 0
    summary = {}
    for pid, prompt in prompts:
        result = optimize_into(out / pid, prompt, settings, config)
        summary[pid] = {k: result[k] for k in ("final_prompt", "final_score", "iterations", "stop_reason")}
        _report(pid, result)
    _write_json(out / "final.json", summary)
    return 0


def _report(pid: str, result: Dict[str, Any]) -> None:
    print(f"{pid}\tscore={result['final_score']:.3f}\titerations={result['iterations']}\t{result['final_prompt']}")


# -- analyze ---------------------------------------------------------------------

def cmd_analyze(args, settings: Settings) -> int:
    prompts = _prompts(args)
    config = _run_config(settings, args)
    out = Path(args.out) if args.out else None
    results = {}
    for pid, prompt in prompts:
        store = ArtifactStore(out / pid if out and len(prompts) > 1 else out)
        backends = build_backends(settings, store, embed_dim=config.embed_dim)
        image = backends.t2i.generate(prompt, config.seed)
        results[pid] = analyze(prompt, image, backends.chat).to_dict()
        errs = results[pid]["error_set"]["records"]
        print(f"{pid}\t{len(errs)} error(s)")
        for e in errs:
            print(f"  [{e['category']}] {e['explanation']}")
    if out is not None:
        _write_json(out / "metadata.json", results[prompts[0][0]] if len(prompts) == 1 else results)
    return 0


# -- simulate / bench --------------------------------------------------------------

def _simulate_one(task, method: str, settings: Settings, args, out: Optional[Path]) -> Dict[str, Any]:
    config = _run_config(settings, args, seed=task.seed)
    if out is not None and method == "full":
        return optimize_into(out / task.id, task.prompt, settings, config, task=task)
    backends = build_backends(settings, ArtifactStore(), task=task, embed_dim=config.embed_dim)
    return run_method(method, task.prompt, config, backends)


def _stats(scores: Sequence[float], target: float = 5.0) -> Dict[str, float]:
    return {"median": statistics.median(scores), "mean": statistics.fmean(scores),
            "solved": sum(s >= target for s in scores) / len(scores)}


def cmd_simulate(args, settings: Settings) -> int:
    if settings.backend != "mock":
        raise UsageError("simulate runs on the synthetic environment; use --backend mock")
    tasks = generate_tasks(args.tasks, args.seed)
    out = Path(args.out) if args.out else None
    rows = []
    print("task\tfocus\tfinal\titers\tstop")
    for task in tasks:
        r = _simulate_one(task, "full", settings, args, out)
        rows.append({"task": task.id, "focus": task.focus, "prompt": task.prompt, "final_score": r["final_score"],
                     "iterations": r["iterations"], "stop_reason": r["stop_reason"],
                     "best_trajectory": r["best_trajectory"], "final_prompt": r["final_prompt"]})
        print(f"{task.id}\t{task.focus}\t{r['final_score']:.3f}\t{r['iterations']}\t{r['stop_reason']}")
    stats = _stats([r["final_score"] for r in rows])
    print(f"median={stats['median']:.3f}\tmean={stats['mean']:.3f}\tsolved={stats['solved']:.0%}")
    if out is not None:
        _write_json(out / "simulate.json", {"tasks": rows, "summary": stats})
    return 0


def cmd_bench(args, settings: Settings) -> int:
    if settings.backend != "mock":
        raise UsageError("bench runs on the synthetic environment; use --backend mock")
    tasks = generate_tasks(args.tasks, args.seed)
    table = {}
    for method in METHODS:
        scores = [_simulate_one(t, method, settings, args, None)["final_score"] for t in tasks]
        table[method] = dict(_stats(scores), scores=scores)
    print("method\tmedian\tmean\tsolved")
    for method in METHODS:
        s = table[method]
        print(f"{method}\t{s['median']:.3f}\t{s['mean']:.3f}\t{s['solved']:.0%}")
    gap = table["full"]["median"] - table["random-rewrite"]["median"]
    print(f"median gap (full - random-rewrite): {gap:.3f}")
    if args.out:
        _write_json(Path(args.out) / "bench.json", {"methods": table, "median_gap": gap,
                                                     "tasks": args.tasks, "seed": args.seed})
    return 0


def cmd_export(args, settings: Settings) -> int:
    if not args.out:
        raise UsageError("export needs --out pointing at a run directory")
    path = export_clusters(Path(args.out), args.csv, seed=args.seed)
    print(path)
    return 0


COMMANDS = {"analyze": cmd_analyze, "optimize": cmd_optimize, "simulate": cmd_simulate,
            "bench": cmd_bench, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML settings file")
    common.add_argument("--backend", choices=("mock", "http"), help="model backends (default: mock)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output or run directory")
    common.add_argument("--resume", action="store_true", help="continue the unfinished run in --out")
    common.add_argument("--prompt")
    common.add_argument("--prompt-file", help="text (one prompt per line) or JSONL with {id, prompt}")
    common.add_argument("--tasks", type=int, default=50, help="number of synthetic tasks")
    common.add_argument("--max-iterations", type=int)
    common.add_argument("--candidates", type=int, help="rewrites per round (N)")
    common.add_argument("--clusters", type=int, help="k-means clusters (K)")
    common.add_argument("--samples", type=int, help="sampled prompts per round (m)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="promptsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="error analysis of one prompt's image")
    sub.add_parser("optimize", parents=[common], help="full prompt search")
    sub.add_parser("simulate", parents=[common], help="search over generated synthetic tasks")
    sub.add_parser("bench", parents=[common], help="synthetic tasks with baselines")
    exp = sub.add_parser("export", parents=[common], help="cluster data of a run as CSV")
    exp.add_argument("--csv", help="output path (default: <run>/clusters.csv)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args.config)
        if args.backend:
            settings.backend = args.backend
        if args.tasks < 1:
            raise UsageError("--tasks must be >= 1")
        return COMMANDS[args.command](args, settings)
    except (UsageError, ConfigError, FileExistsError) as exc:
        parser.print_usage(sys.stderr)
        print(f"promptsearch: error: {exc}", file=sys.stderr)
        return 2
    except PIPELINE_FAILURES as exc:
        print(f"promptsearch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
