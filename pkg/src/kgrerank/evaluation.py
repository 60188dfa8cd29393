"""Retrieval evaluation: NDCG@k, paired t-tests, and query coherence."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

# slack for cosines of identical vectors that round to just below 1
COSINE_EPS = 1e-9


def gain(grade, mode="linear"):
    if mode == "linear":
        return float(grade)
    if mode == "exponential":
        return 2.0 ** grade - 1.0
    raise ValueError(f"unknown gain mode {mode!r}")


def dcg(grades, k, mode="linear"):
    return sum(gain(g, mode) / math.log2(i + 2) for i, g in enumerate(list(grades)[:k]))


def ndcg(ranked, judged, k, mode="linear"):
    """NDCG@k of one ranked entity list against ``{entity: grade}``.

    Returns 0.0 when nothing is relevant.
    """
    ideal = dcg(sorted(judged.values(), reverse=True), k, mode)
    if ideal == 0.0:
        return 0.0
    return dcg([judged.get(e, 0) for e in ranked], k, mode) / ideal


@dataclass
class EvalResult:
    ks: tuple
    per_query: dict  # qid -> {k: ndcg}
    no_relevant: list = field(default_factory=list)
    not_in_qrels: list = field(default_factory=list)
    missing_from_run: list = field(default_factory=list)
    gain: str = "linear"

    def mean(self, k):
        if not self.per_query:
            return 0.0
        return float(np.mean([v[k] for v in self.per_query.values()]))

    @property
    def means(self):
        return {k: self.mean(k) for k in self.ks}

    def values(self, k, qids=None):
        qids = self.per_query if qids is None else qids
        return [self.per_query[q][k] for q in qids]


def evaluate_run(run, qrels, ks=(10, 100), gain_mode="linear"):
    """NDCG at each cutoff in ``ks`` for every query in ``qrels``.

    Queries judged but absent from the run score 0; run queries without
    judgments are excluded and listed in ``not_in_qrels``.
    """
    ks = tuple(ks)
    if any(k < 1 for k in ks):
        raise ValueError("cutoffs must be >= 1")
    res = EvalResult(ks, {}, gain=gain_mode)
    res.not_in_qrels = [q for q in run if q not in qrels]
    if res.not_in_qrels:
        log.warning("%d run queries have no qrels; excluded", len(res.not_in_qrels))
    for qid, judged in qrels.items():
        if not any(g > 0 for g in judged.values()):
            res.no_relevant.append(qid)
        if qid in run:
            ranked = run.entities(qid)
        else:
            ranked = []
            res.missing_from_run.append(qid)
        res.per_query[qid] = {k: ndcg(ranked, judged, k, gain_mode) for k in ks}
    return res


def ndcg_at_k(run, qrels, k, gain_mode="linear"):
    return evaluate_run(run, qrels, (k,), gain_mode)


def write_eval_report(result, out):
    """CSV: ``query_id, ndcg@k...`` per query, then an ``ALL`` mean row."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id"] + [f"ndcg@{k}" for k in result.ks])
        for qid, vals in result.per_query.items():
            w.writerow([qid] + [f"{vals[k]:.6f}" for k in result.ks])
        w.writerow(["ALL"] + [f"{result.mean(k):.6f}" for k in result.ks])

    if hasattr(out, "write"):
        emit(out)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            emit(fh)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    n: int
    degenerate: bool = False

    def significant(self, alpha=0.05):
        return self.p < alpha


def paired_ttest(a, b):
    """Two-sided paired t-test over per-query values.

    All-zero differences give ``p=1`` and zero-variance nonzero differences
    give ``p=0``; both are flagged ``degenerate``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two paired observations")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if np.all(d == 0):
        return TTestResult(0.0, 1.0, n, True)
    if sd == 0.0:
        log.warning("paired differences have zero variance; reporting p=0")
        return TTestResult(math.copysign(math.inf, mean), 0.0, n, True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return TTestResult(float(t), float(min(p, 1.0)), n)


def coherence(vectors, tau):
    """Fraction of unordered pairs whose cosine similarity is at least ``tau``."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("coherence needs at least two vectors")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("coherence is undefined for zero vectors")
    X = X / norms[:, None]
    sims = X @ X.T
    iu = np.triu_indices(len(X), k=1)
    return float(np.mean(sims[iu] >= tau - COSINE_EPS))


@dataclass
class CoherenceReport:
    tau: float
    min_rel: int
    rows: list  # (qid, M, dropped, Co)
    excluded: list = field(default_factory=list)

    @property
    def scores(self):
        return {qid: co for qid, _, _, co in self.rows}

    @property
    def mean(self):
        return float(np.mean([r[3] for r in self.rows])) if self.rows else float("nan")

    def write(self, out):
        def emit(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "M", "dropped", "tau", "coherence"])
            for qid, m, dropped, co in self.rows:
                w.writerow([qid, m, dropped, self.tau, f"{co:.6f}"])

        if hasattr(out, "write"):
            emit(out)
        else:
            with open(out, "w", encoding="utf-8", newline="") as fh:
                emit(fh)


def coherence_report(qrels, space, tau=0.7, min_rel=10):
    """Coherence of each query's relevant entities (grade >= 1) in ``space``.

    Entities without vectors are dropped; queries left with fewer than
    ``max(min_rel, 2)`` entities are excluded.
    """
    floor = max(min_rel, 2)
    rows, excluded = [], []
    for qid in qrels:
        rel = qrels.relevant(qid) if hasattr(qrels, "relevant") else \
            [e for e, g in qrels[qid].items() if g >= 1]
        vecs = [space.get(e) for e in rel]
        vecs = [v for v in vecs if v is not None and np.any(v)]
        dropped = len(rel) - len(vecs)
        if len(vecs) < floor:
            excluded.append(qid)
            continue
        rows.append((qid, len(vecs), dropped, coherence(vecs, tau)))
    return CoherenceReport(tau, min_rel, rows, excluded)
