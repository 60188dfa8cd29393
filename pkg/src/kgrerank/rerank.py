"""Embedding-based re-ranking of a baseline entity run.

Each candidate gets a confidence-weighted cosine similarity to the entities
linked in the query, interpolated with its (normalised) baseline score.
With several interpretations the best interpolated score wins.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .evaluation import evaluate_run
from .trec import RankedRun

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RerankConfig:
    lam: float = 0.5
    normalization: str = "minmax"  # or "none"
    missing: str = "zero"  # or "skip"
    depth: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda {self.lam} outside [0, 1]")
        if self.normalization not in ("minmax", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.missing not in ("zero", "skip"):
            raise ValueError(f"unknown missing-embedding policy {self.missing!r}")
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be >= 1")


def _unit(vec):
    if vec is None:
        return None
    v = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(v)
    return None if n == 0.0 else v / n


def embedding_score(entity, interpretation, space, stats=None):
    """Sum of ``confidence * cos(entity, linked)`` over an interpretation.

    Linked entities without a vector contribute nothing; a candidate
    without a vector scores 0. ``stats`` (a dict) counts the misses.
    """
    cand = _unit(space.get(entity))
    if cand is None:
        if stats is not None:
            stats["candidate_missing"] = stats.get("candidate_missing", 0) + 1
        return 0.0
    total = 0.0
    for le in interpretation:
        v = _unit(space.get(le.entity))
        if v is None:
            if stats is not None:
                stats["linked_missing"] = stats.get("linked_missing", 0) + 1
            continue
        total += le.confidence * float(np.clip(cand @ v, -1.0, 1.0))
    return total


def interpolate(score_other, f, lam):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    return (1.0 - lam) * score_other + lam * f


def normalize(scores, mode="minmax"):
    scores = np.asarray(scores, dtype=np.float64)
    if mode == "none" or len(scores) == 0:
        return scores
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


class _VectorCache:
    def __init__(self, space):
        self.space = space
        self.cache = {}

    def get(self, token):
        if token not in self.cache:
            self.cache[token] = _unit(self.space.get(token))
        return self.cache[token]


def _features(items, annotation, cache, cfg, stats):
    """Normalised baseline scores and the F matrix (candidates x interpretations)."""
    if cfg.depth is not None:
        items = items[:cfg.depth]
    interps = annotation.interpretations if annotation is not None else []
    if interps and cfg.missing == "skip":
        kept = [it for it in items if cache.get(it[0]) is not None]
        stats["skipped_candidates"] += len(items) - len(kept)
        items = kept
    base = normalize([s for _, s in items], cfg.normalization)
    F = np.zeros((len(items), len(interps)))
    for j, interp in enumerate(interps):
        linked = [(le.confidence, cache.get(le.entity)) for le in interp]
        stats["linked_missing"] += sum(v is None for _, v in linked)
        linked = [(c, v) for c, v in linked if v is not None]
        for i, (e, _) in enumerate(items):
            cand = cache.get(e)
            if cand is None:
                continue
            F[i, j] = sum(c * float(np.clip(cand @ v, -1.0, 1.0)) for c, v in linked)
    stats["candidate_missing"] += sum(cache.get(e) is None for e, _ in items) if interps else 0
    return [e for e, _ in items], base, F


def _combine(entities, base, F, lam):
    if F.shape[1]:
        total = np.max(interpolate(base[:, None], F, lam), axis=1)
    else:
        total = (1.0 - lam) * base
    order = sorted(range(len(entities)), key=lambda i: (-total[i], i))
    return [(entities[i], float(total[i])) for i in order]


def _prepare(baseline, annotations, space, cfg):
    stats = {"queries": len(baseline), "unannotated": 0, "annotations_without_run": 0,
             "skipped_candidates": 0, "linked_missing": 0, "candidate_missing": 0}
    orphan = [q for q in annotations if q not in baseline]
    if orphan:
        stats["annotations_without_run"] = len(orphan)
        log.warning("%d annotated queries are absent from the baseline run", len(orphan))
    cache = _VectorCache(space)
    feats = {}
    for qid in baseline:
        ann = annotations.get(qid)
        if ann is None or not ann.interpretations:
            stats["unannotated"] += 1
        feats[qid] = _features(baseline[qid], ann, cache, cfg, stats)
    return feats, stats


def rerank_run(baseline, annotations, space, cfg=RerankConfig(), tag=None):
    """Re-rank every query of ``baseline``.

    ``annotations`` maps query id to :class:`~kgrerank.linking.QueryAnnotations`;
    ``space`` needs a ``get(entity)`` returning a vector or ``None``.
    Ties keep baseline order. Unannotated queries keep their baseline
    order with scores ``(1 - lam) * normalised baseline``.
    """
    feats, stats = _prepare(baseline, annotations, space, cfg)
    out = RankedRun(tag=tag or f"{baseline.tag}_rerank")
    for qid, (entities, base, F) in feats.items():
        out.add_query(qid, _combine(entities, base, F, cfg.lam))
    out.diagnostics = stats
    return out


def sweep_lambda(baseline, annotations, space, qrels, grid, cfg=RerankConfig(),
                 ks=(10, 100)):
    """Evaluate re-ranking at each lambda in ``grid``.

    Returns rows ``{"lambda", "ndcg@10", "ndcg@100", "best"}``; the best row
    has the highest mean NDCG at the first cutoff (smallest lambda on ties).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    for lam in grid:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda {lam} outside [0, 1]")
    feats, _ = _prepare(baseline, annotations, space, cfg)
    rows = []
    for lam in grid:
        run = RankedRun(tag=f"{baseline.tag}_l{lam:g}")
        for qid, (entities, base, F) in feats.items():
            run.add_query(qid, _combine(entities, base, F, lam))
        res = evaluate_run(run, qrels, ks)
        row = {"lambda": lam}
        row.update({f"ndcg@{k}": res.mean(k) for k in ks})
        row["best"] = False
        rows.append(row)
    key = f"ndcg@{ks[0]}"
    best = max(range(len(rows)), key=lambda i: (rows[i][key], -rows[i]["lambda"]))
    rows[best]["best"] = True
    return rows
