"""ComplEx embeddings: complex-valued bilinear scoring of triples.

Each entity and relation row stores ``d`` real parts followed by ``d``
imaginary parts. A triple scores ``Re(sum_j h_j * r_j * conj(t_j))``, which
is what lets one relation behave anti-symmetrically.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import MissingEmbedding
from .kg import Vocab
from .sgns import EmbeddingSpace, read_word2vec, write_word2vec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    dimension: int = 32
    epochs: int = 100
    learning_rate: float = 0.1
    negatives_per_positive: int = 8
    corruption: tuple = (0.4, 0.2, 0.4)  # head, relation, tail
    batch_size: int = 128
    seed: int = 0
    regularization: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.dimension < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("dimension, epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.negatives_per_positive < 0:
            raise ValueError("learning_rate must be positive, negatives non-negative")
        if len(self.corruption) != 3 or min(self.corruption) < 0 or sum(self.corruption) <= 0:
            raise ValueError("corruption must be three non-negative weights")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")


@dataclass(eq=False)
class ComplexEmbeddingSpace:
    entities: Vocab
    relations: Vocab
    ent: np.ndarray  # (|E|, 2d): real | imaginary
    rel: np.ndarray  # (|R|, 2d)
    losses: list = field(default_factory=list)

    @property
    def dim(self):
        return self.ent.shape[1] // 2

    def entity_index(self, e):
        if isinstance(e, (int, np.integer)):
            return int(e)
        idx = self.entities.get(e)
        if idx is None:
            raise MissingEmbedding(e)
        return idx

    def relation_index(self, r):
        if isinstance(r, (int, np.integer)):
            return int(r)
        idx = self.relations.get(r)
        if idx is None:
            raise MissingEmbedding(r)
        return idx

    def entity_space(self):
        """Entities as real 2d-vectors (real parts then imaginary parts)."""
        return EmbeddingSpace(Vocab(self.entities), self.ent.copy())

    def relation_space(self):
        return EmbeddingSpace(Vocab(self.relations), self.rel.copy())


def split(x):
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def complex_score(h, r, t):
    """Vectorised ComplEx score over the last axis of concatenated re|im arrays."""
    hr, hi = split(h)
    rr, ri = split(r)
    tr, ti = split(t)
    return (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(axis=-1)


def score_triple(space, h, r, t):
    """Score of ``(h, r, t)``; ids may be strings or indices."""
    hi, ri, ti = space.entity_index(h), space.relation_index(r), space.entity_index(t)
    return float(complex_score(space.ent[hi], space.rel[ri], space.ent[ti]))


def bce_loss_and_grads(h, r, t, labels):
    """Binary cross-entropy of ``sigmoid(score)`` against ``labels`` per sample.

    Returns ``(loss, grad_h, grad_r, grad_t)`` with gradients of the
    unreduced per-sample losses, in the concatenated re|im layout.
    """
    s = complex_score(h, r, t)
    labels = np.asarray(labels, dtype=s.dtype)
    # -y log sig(s) - (1-y) log(1-sig(s))
    loss = labels * np.logaddexp(0.0, -s) + (1.0 - labels) * np.logaddexp(0.0, s)
    g = (0.5 * (1.0 + np.tanh(0.5 * s)) - labels)[..., None]
    hr, hi = split(h)
    rr, ri = split(r)
    tr, ti = split(t)
    grad_h = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=-1) * g
    grad_r = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=-1) * g
    grad_t = np.concatenate([hr * rr - hi * ri, hi * rr + hr * ri], axis=-1) * g
    return loss, grad_h, grad_r, grad_t


def corrupt(triples, n_neg, probs, n_ent, n_rel, rng):
    """Replace exactly one of head/relation/tail of each repeated positive."""
    neg = np.repeat(triples, n_neg, axis=0)
    p = np.asarray(probs, dtype=np.float64)
    slot = rng.choice(3, size=len(neg), p=p / p.sum())
    for s, size in ((0, n_ent), (1, n_rel), (2, n_ent)):
        m = slot == s
        neg[m, s] = rng.integers(0, size, int(m.sum()))
    return neg


class _Adagrad:
    def __init__(self, table, lr, eps=1e-10):
        self.table, self.lr, self.eps = table, lr, eps
        self.acc = np.zeros_like(table)

    def step(self, rows, grads):
        uniq, inv = np.unique(rows, return_inverse=True)
        g = np.zeros((len(uniq), self.table.shape[1]), dtype=self.table.dtype)
        np.add.at(g, inv, grads)
        self.acc[uniq] += g * g
        self.table[uniq] -= self.lr * g / (np.sqrt(self.acc[uniq]) + self.eps)


def train_complex(kg, cfg=TrainConfig(), triples=None, callback=None):
    """Train ComplEx on ``kg`` (or on the index ``triples`` subset of it).

    Each positive is paired with ``negatives_per_positive`` corruptions;
    loss is mean binary cross-entropy over positives (label 1) and
    negatives (label 0) per batch, optimised with Adagrad on touched rows.
    """
    data = np.asarray(kg.edges if triples is None else triples, dtype=np.int64).reshape(-1, 3)
    if len(data) == 0:
        raise ValueError("knowledge graph has no triples")
    n_ent, n_rel = len(kg.entities), len(kg.relations)
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dimension
    scale = 0.1 / np.sqrt(d)
    ent = rng.normal(0.0, scale, (n_ent, 2 * d)).astype(dtype)
    rel = rng.normal(0.0, scale, (n_rel, 2 * d)).astype(dtype)
    space = ComplexEmbeddingSpace(Vocab(kg.entities), Vocab(kg.relations), ent, rel)
    opt_e = _Adagrad(ent, cfg.learning_rate)
    opt_r = _Adagrad(rel, cfg.learning_rate)
    k = cfg.negatives_per_positive

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            pos = data[perm[start:start + cfg.batch_size]]
            neg = corrupt(pos, k, cfg.corruption, n_ent, n_rel, rng) if k else pos[:0]
            batch = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
            h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
            loss, gh, gr, gt = bce_loss_and_grads(ent[h], rel[r], ent[t], labels)
            m = len(batch)
            gh, gr, gt = gh / m, gr / m, gt / m
            if cfg.regularization:
                w = cfg.regularization
                gh = gh + w * ent[h]
                gr = gr + w * rel[r]
                gt = gt + w * ent[t]
            opt_e.step(np.concatenate([h, t]), np.concatenate([gh, gt]))
            opt_r.step(r, gr)
            total += float(loss.sum())
            count += m
        space.losses.append(total / count)
        log.debug("complex epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, space.losses[-1])
        if callback is not None:
            callback(epoch, space)
    return space


@dataclass(frozen=True)
class RankResult:
    triple: tuple
    direction: str
    raw_rank: int
    filtered_rank: int

    @property
    def reciprocal_rank(self):
        return 1.0 / self.raw_rank

    @property
    def filtered_reciprocal_rank(self):
        return 1.0 / self.filtered_rank


def rank_entities(space, anchor, relation, direction="tail", target=None, known=None):
    """Rank every entity as the missing ``direction`` slot of a query.

    For ``direction="tail"`` the query is ``(anchor, relation, ?)``; for
    ``"head"`` it is ``(?, relation, anchor)``. Returns ``(ranking, result)``
    where ``ranking`` lists ``(entity index, score)`` by descending score
    (ties by index) and ``result`` is a :class:`RankResult` for ``target``
    (``None`` when no target is given). ``known`` is a set of index
    triples whose other completions are skipped for the filtered rank.
    """
    if direction not in ("tail", "head"):
        raise ValueError("direction must be 'tail' or 'head'")
    a = space.entity_index(anchor)
    r = space.relation_index(relation)
    if direction == "tail":
        scores = complex_score(space.ent[a][None, :], space.rel[r][None, :], space.ent)
    else:
        scores = complex_score(space.ent, space.rel[r][None, :], space.ent[a][None, :])
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranking = [(int(i), float(scores[i])) for i in order]
    if target is None:
        return ranking, None
    tgt = space.entity_index(target)
    pos = np.empty(len(order), dtype=np.int64)
    pos[order] = np.arange(len(order))
    raw = int(pos[tgt]) + 1
    ahead = order[:pos[tgt]]
    filtered = raw
    if known:
        if direction == "tail":
            skip = sum((a, r, int(e)) in known for e in ahead)
        else:
            skip = sum((int(e), r, a) in known for e in ahead)
        filtered = raw - skip
    triple = (a, r, tgt) if direction == "tail" else (tgt, r, a)
    return ranking, RankResult(triple, direction, raw, filtered)


def evaluate_link_prediction(space, test_triples, known, directions=("tail", "head"),
                             hits=(1, 3, 10)):
    """Raw and filtered MRR / Hits@k over ``test_triples`` (index triples)."""
    results = []
    for h, r, t in np.asarray(test_triples, dtype=np.int64).tolist():
        for direction in directions:
            if direction == "tail":
                _, res = rank_entities(space, h, r, "tail", t, known)
            else:
                _, res = rank_entities(space, t, r, "head", h, known)
            results.append(res)
    raw = np.array([x.raw_rank for x in results], dtype=np.float64)
    filt = np.array([x.filtered_rank for x in results], dtype=np.float64)
    out = {"queries": len(results), "mrr": float(np.mean(1 / raw)),
           "filtered_mrr": float(np.mean(1 / filt))}
    for k in hits:
        out[f"hits@{k}"] = float(np.mean(filt <= k))
    out["results"] = results
    return out


def random_mrr(n_candidates):
    """Expected reciprocal rank of a uniformly random rank among ``n`` candidates."""
    return float(np.sum(1.0 / np.arange(1, n_candidates + 1)) / n_candidates)


def write_complex(space, entity_path, relation_path):
    write_word2vec(space.entity_space(), entity_path)
    write_word2vec(space.relation_space(), relation_path)


def read_complex(entity_path, relation_path):
    ents, rels = read_word2vec(entity_path), read_word2vec(relation_path)
    return ComplexEmbeddingSpace(ents.tokens, rels.tokens, ents.vectors, rels.vectors)
