"""Per-candidate cluster data from a run log, as CSV.

Columns:
    iteration      round number (1-based)
    candidate      candidate id
    x, y           embedding projected to 2-D with a seeded Gaussian matrix
    cluster        k-means label (empty for runs without clustering)
    score          rubric average of the candidate
    posterior      posterior weight of the candidate's cluster (empty without clustering)
    sampled        1 if the candidate was in the sampled set, else 0
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import List, Optional

import numpy as np

from .runlog import iteration_events

HEADER = ["iteration", "candidate", "x", "y", "cluster", "score", "posterior", "sampled"]


def projection(dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((dim, 2)) / math.sqrt(2.0)


def export_clusters(run_dir, out_path=None, seed: int = 0) -> Path:
    events = iteration_events(Path(run_dir))
    out = Path(out_path) if out_path else Path(run_dir) / "clusters.csv"
    rows: List[list] = []
    proj: Optional[np.ndarray] = None
    for ev in events:
        rec = ev["record"]
        emb = np.asarray(rec["embeddings"], dtype=float)
        if proj is None:
            proj = projection(emb.shape[1], seed)
        xy = emb @ proj
        labels = rec["assignment"]["labels"] if rec.get("assignment") else None
        post = rec["posterior"]["posteriors"] if rec.get("posterior") else None
        sampled = set(rec["sampled"])
        for i, (cand, report) in enumerate(zip(rec["candidates"], rec["reports"])):
            lab = labels[i] if labels is not None else ""
            rows.append([
                rec["iteration"], cand["id"], f"{xy[i, 0]:.6f}", f"{xy[i, 1]:.6f}", lab,
                f"{report['average']:.6f}", f"{post[lab]:.6f}" if post is not None else "",
                int(cand["id"] in sampled),
            ])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        writer.writerows(rows)
    return out
