"""Skip-gram embeddings trained with negative sampling.

Training is mini-batched: each batch gathers (center, context, negatives)
triples, computes the negative-sampling gradients in closed form, and
scatters them back with ``np.add.at``. With ``workers > 1`` batches run
concurrently on the shared matrices without locking.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import FormatError, MissingEmbedding
from .kg import Vocab
from .walks import WalkCorpus

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgnsConfig:
    dimension: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_lr_fraction: float = 1e-4
    min_count: int = 0
    subsample_threshold: float = 0.0
    seed: int = 0
    batch_size: int = 64
    noise_power: float = 0.75
    loss: str = "negative_sampling"  # or "softmax" (tiny vocabularies only)
    dtype: str = "float32"
    workers: int = 1

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 0 or self.min_count < 0 or self.subsample_threshold < 0:
            raise ValueError("negatives, min_count and subsample_threshold must be >= 0")
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs, learning_rate and batch_size must be positive")
        if self.loss not in ("negative_sampling", "softmax"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(eq=False)
class EmbeddingSpace:
    """Token vocabulary plus input vectors (rows of ``vectors``).

    ``context`` holds the output matrix when the space came from training.
    """

    tokens: Vocab
    vectors: np.ndarray
    context: np.ndarray = None
    losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vector table does not match vocabulary")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.tokens

    def vector(self, token):
        idx = self.tokens.get(token)
        if idx is None:
            raise MissingEmbedding(token)
        return self.vectors[idx]

    def get(self, token, default=None):
        idx = self.tokens.get(token)
        return default if idx is None else self.vectors[idx]

    def cosine(self, a, b):
        return cosine(self, a, b)

    def nearest(self, token, n=10):
        return nearest(self, token, n)

    def subset(self, tokens):
        tokens = [t for t in tokens if t in self.tokens]
        rows = [self.tokens.index(t) for t in tokens]
        return EmbeddingSpace(Vocab(tokens), self.vectors[rows].copy())


def cosine_vectors(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine(space, a, b):
    """Cosine similarity of two tokens; raises :class:`MissingEmbedding`."""
    return cosine_vectors(space.vector(a), space.vector(b))


def nearest(space, token, n=10):
    """The ``n`` most cosine-similar other tokens, ties broken by row index."""
    query = space.vector(token)
    if n <= 0:
        return []
    qi = space.tokens.index(token)
    mat = space.vectors.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    q = query.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = mat @ q / (norms * np.linalg.norm(q))
    sims = np.nan_to_num(sims, nan=-np.inf)
    idx = np.arange(len(sims))
    keep = idx != qi
    order = np.lexsort((idx[keep], -sims[keep]))
    chosen = idx[keep][order][:n]
    return [(space.tokens.string(i), float(sims[i])) for i in chosen]


def _format_vector(vec):
    return " ".join(str(x) for x in np.asarray(vec, dtype=np.float32))


def write_word2vec(space, path, prefix_for=None):
    """Write the word2vec text format: ``|vocab| dim`` header then one row per token.

    ``prefix_for`` optionally maps a token to a string prefix (e.g. ``ENTITY/``).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(space)} {space.dim}\n")
        for i, tok in enumerate(space.tokens):
            if any(c.isspace() for c in tok):
                raise ValueError(f"token contains whitespace: {tok!r}")
            name = (prefix_for(tok) if prefix_for else "") + tok
            fh.write(f"{name} {_format_vector(space.vectors[i])}\n")


def read_word2vec(path, dtype=np.float32):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError("expected '<vocab> <dim>' header", path=path, line=1)
        n, dim = int(header[0]), int(header[1])
        tokens, rows = Vocab(), np.empty((n, dim), dtype=dtype)
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(f"expected {dim + 1} fields, got {len(parts)}",
                                  path=path, line=lineno)
            if parts[0] in tokens:
                raise FormatError(f"duplicate token {parts[0]!r}", path=path, line=lineno)
            if len(tokens) >= n:
                raise FormatError("more rows than declared in header", path=path, line=lineno)
            rows[tokens.add(parts[0])] = np.array(parts[1:], dtype=np.float64)
    if len(tokens) != n:
        raise FormatError(f"header declares {n} rows, found {len(tokens)}", path=path)
    return EmbeddingSpace(tokens, rows)


# ---------------------------------------------------------------------------
# loss and gradients


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ns_loss_and_grads(v, u, neg):
    """Negative-sampling loss per pair and its gradients.

    ``v``: (B, d) center rows, ``u``: (B, d) context rows, ``neg``: (B, k, d)
    noise rows. Loss is ``-log s(v.u) - sum log s(-v.n)``. Returns
    ``(loss, grad_v, grad_u, grad_neg)``.
    """
    pos = np.einsum("bd,bd->b", v, u)
    negs = np.einsum("bd,bkd->bk", v, neg)
    loss = -_log_sigmoid(pos) - _log_sigmoid(-negs).sum(axis=1)
    gp = _sigmoid(pos) - 1.0
    gn = _sigmoid(negs)
    grad_v = gp[:, None] * u + np.einsum("bk,bkd->bd", gn, neg)
    grad_u = gp[:, None] * v
    grad_neg = gn[:, :, None] * v[:, None, :]
    return loss, grad_v, grad_u, grad_neg


def softmax_loss_and_grads(v, U, targets, candidates=None):
    """Full-softmax skip-gram loss ``-log softmax(v U^T)[target]`` per row.

    ``candidates`` restricts the normaliser to a subset of rows of ``U``
    (``targets`` index into that subset). Returns ``(loss, grad_v, grad_U)``
    where ``grad_U`` has the shape of ``U[candidates]``.
    """
    Uc = U if candidates is None else U[candidates]
    logits = v @ Uc.T
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(len(targets))
    loss = lse - logits[rows, targets]
    probs = np.exp(logits - lse[:, None])
    probs[rows, targets] -= 1.0
    return loss, probs @ Uc, probs.T @ v


class NoiseSampler:
    """Draws negatives from a smoothed unigram distribution over ``ids``."""

    def __init__(self, ids, counts, power=0.75):
        ids = np.asarray(ids, dtype=np.int64)
        w = np.asarray(counts, dtype=np.float64) ** power
        if len(ids) == 0 or w.sum() <= 0:
            self.ids, self.cdf = ids, None
            return
        self.ids = ids
        self.cdf = np.cumsum(w / w.sum())
        self.cdf[-1] = 1.0

    def __call__(self, rng, shape):
        if self.cdf is None:
            raise ValueError("noise distribution is empty")
        return self.ids[np.searchsorted(self.cdf, rng.random(shape), side="right")]


def _as_int_sentences(corpus):
    if isinstance(corpus, WalkCorpus):
        return corpus.tokens, [np.asarray(s, dtype=np.int64) for s in corpus.sequences]
    vocab = Vocab()
    sents = [np.array([vocab.add(t) for t in sent], dtype=np.int64) for sent in corpus]
    return list(vocab), sents


def context_pairs(sentences, window):
    """All (center, context) position pairs within ``window`` of each other.

    ``sentences`` is a list of int arrays. Returns two int arrays of token ids.
    """
    sentences = [s for s in sentences if len(s)]
    if not sentences:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    flat = np.concatenate(sentences)
    sid = np.repeat(np.arange(len(sentences)), [len(s) for s in sentences])
    centers, contexts = [], []
    n = len(flat)
    for j in range(-window, window + 1):
        if j == 0:
            continue
        i = np.arange(max(0, -j), min(n, n - j))
        ok = sid[i] == sid[i + j]
        centers.append(flat[i[ok]])
        contexts.append(flat[i[ok] + j])
    return np.concatenate(centers), np.concatenate(contexts)


def _subsample(sentences, counts, threshold, rng):
    if threshold <= 0:
        return sentences
    thr = threshold * counts.sum()
    with np.errstate(divide="ignore"):
        keep_p = np.minimum(1.0, (np.sqrt(counts / thr) + 1.0) * thr / counts)
    out = []
    for s in sentences:
        out.append(s[rng.random(len(s)) < keep_p[s]])
    return out


def _run_batches(step, n_batches, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return sum(pool.map(step, range(n_batches)))
    return sum(step(b) for b in range(n_batches))


def train_skipgram(corpus, cfg=SgnsConfig(), callback=None):
    """Train skip-gram vectors over token sequences.

    ``corpus`` is a :class:`WalkCorpus` or an iterable of token lists.
    Returns an :class:`EmbeddingSpace` whose rows come from the input
    matrix; mean loss per training pair is appended to ``space.losses``
    after every epoch. ``callback(epoch, space)`` runs after each epoch.
    """
    names, sents = _as_int_sentences(corpus)
    counts = np.bincount(np.concatenate(sents) if sents else np.empty(0, np.int64),
                         minlength=len(names)).astype(np.int64)
    # vocabulary order: frequency desc, then first appearance
    first_pos = {}
    for s in sents:
        for t in s.tolist():
            first_pos.setdefault(t, len(first_pos))
    surviving = [t for t in first_pos if counts[t] >= max(cfg.min_count, 1)]
    if not surviving:
        raise ValueError("empty vocabulary after min_count filtering")
    surviving.sort(key=lambda t: (-counts[t], first_pos[t]))
    remap = np.full(len(names), -1, dtype=np.int64)
    remap[surviving] = np.arange(len(surviving))
    sents = [remap[s][remap[s] >= 0] for s in sents]
    vocab = Vocab(names[t] for t in surviving)
    freq = counts[surviving].astype(np.float64)

    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    n, d = len(vocab), cfg.dimension
    V = ((rng.random((n, d)) - 0.5) / d).astype(dtype)
    U = np.zeros((n, d), dtype=dtype)
    space = EmbeddingSpace(vocab, V, U)
    noise = NoiseSampler(np.arange(n), freq, cfg.noise_power)

    for epoch in range(cfg.epochs):
        epoch_sents = _subsample(sents, freq, cfg.subsample_threshold, rng)
        centers, contexts = context_pairs(epoch_sents, cfg.window)
        if len(centers) == 0:
            raise ValueError("corpus yields no training pairs")
        perm = rng.permutation(len(centers))
        centers, contexts = centers[perm], contexts[perm]
        negatives = (noise(rng, (len(centers), cfg.negatives)) if cfg.negatives
                     else np.empty((len(centers), 0), np.int64))
        bs = cfg.batch_size
        n_batches = -(-len(centers) // bs)

        def step(b, epoch=epoch, centers=centers, contexts=contexts, negatives=negatives,
                 n_batches=n_batches):
            progress = (epoch + b / n_batches) / cfg.epochs
            lr = cfg.learning_rate * max(cfg.min_lr_fraction, 1.0 - progress)
            sl = slice(b * bs, (b + 1) * bs)
            c, o = centers[sl], contexts[sl]
            if cfg.loss == "softmax":
                loss, gv, gU = softmax_loss_and_grads(V[c], U, o)
                np.add.at(V, c, (-lr * gv).astype(dtype))
                U[...] -= (lr * gU).astype(dtype)
            else:
                ng = negatives[sl]
                loss, gv, gu, gn = ns_loss_and_grads(V[c], U[o], U[ng])
                np.add.at(V, c, (-lr * gv).astype(dtype))
                np.add.at(U, o, (-lr * gu).astype(dtype))
                if ng.size:
                    np.add.at(U, ng.ravel(), (-lr * gn.reshape(-1, d)).astype(dtype))
            return float(loss.sum(dtype=np.float64))

        total = _run_batches(step, n_batches, cfg.workers)
        space.losses.append(total / len(centers))
        log.info("sgns epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, space.losses[-1])
        if callback is not None:
            callback(epoch, space)
    return space
