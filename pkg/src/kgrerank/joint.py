"""Joint word/entity skip-gram (Wikipedia2Vec style).

Words and entities share one vector table. Three pair streams are trained
together with negative sampling:

* word context: a word predicts the words within ``window`` of it,
* link graph: an entity predicts the entities it links to,
* anchor context: a linked entity predicts the words around its anchor.

The streams are shuffled into one sequence each epoch, so they interleave
in proportion to their sizes, and the reported loss is their plain sum.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import FormatError, MissingEmbedding
from .kg import Vocab
from .sgns import (EmbeddingSpace, NoiseSampler, SgnsConfig, context_pairs, ns_loss_and_grads,
                   read_word2vec, write_word2vec)

log = logging.getLogger(__name__)

ENTITY_PREFIX = "ENTITY/"
WORD, LINK, ANCHOR = 0, 1, 2
STREAMS = ("L_w", "L_e", "L_a")


@dataclass(eq=False)
class JointCorpus:
    words: Vocab
    entities: Vocab
    documents: list  # int arrays over ``words``
    links: np.ndarray  # (n, 2) entity index pairs, no self links
    anchors: list  # (entity index, int array of context word ids)
    window: int
    diagnostics: dict = field(default_factory=dict)

    def pair_counts(self, symmetric_links=True):
        word_pairs = len(context_pairs(self.documents, self.window)[0])
        link_pairs = len(self.links) * (2 if symmetric_links else 1)
        anchor_pairs = sum(len(ctx) for _, ctx in self.anchors)
        return {"word": word_pairs, "link": link_pairs, "anchor": anchor_pairs}

    def link_pairs(self):
        ent = self.entities.string
        return {(ent(a), ent(b)) for a, b in self.links.tolist()}

    def anchor_pairs(self):
        ent, word = self.entities.string, self.words.string
        return {(ent(e), word(w)) for e, ctx in self.anchors for w in ctx.tolist()}


def _read_docs(docs):
    if isinstance(docs, (str, Path)):
        out = {}
        with open(docs, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                doc_id, sep, text = line.partition("\t")
                if not sep:
                    raise FormatError("expected doc_id<TAB>text", path=docs, line=lineno)
                out[doc_id] = text.split()
        return out
    return {k: (v.split() if isinstance(v, str) else list(v)) for k, v in dict(docs).items()}


def _read_tsv(source, ncols):
    if source is None:
        return []
    if not isinstance(source, (str, Path)):
        return [tuple(row) for row in source]
    rows = []
    with open(source, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise FormatError(f"expected {ncols} tab-separated fields", path=source,
                                  line=lineno)
            rows.append(tuple(parts))
    return rows


def build_joint_corpus(docs, links=None, anchors=None, window=5, min_count=0,
                       entities=(), disambiguation=(), include_disambiguation=True):
    """Assemble the three training streams.

    ``docs`` maps doc ids to text (or is a ``doc_id<TAB>text`` file),
    ``links`` yields ``(entity, linked_entity)`` and ``anchors`` yields
    ``(doc_id, token_offset, entity)``; both may be TSV paths. Anchors
    outside their document are skipped and counted. ``entities`` adds
    entity rows that have no links or anchors. Entities listed in
    ``disambiguation`` are dropped when ``include_disambiguation`` is false.
    """
    documents = _read_docs(docs)
    drop = set() if include_disambiguation else set(disambiguation)
    diag = {"self_links": 0, "anchors_out_of_bounds": 0, "anchors_unknown_doc": 0,
            "disambiguation_dropped": 0}

    counts = {}
    for toks in documents.values():
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    words = Vocab(t for t in counts if counts[t] >= min_count)
    doc_ids = {doc_id: np.array([words.get(t, -1) for t in toks], dtype=np.int64)
               for doc_id, toks in documents.items()}

    ent_vocab = Vocab()
    for e in entities:
        if e not in drop:
            ent_vocab.add(e)
    link_rows = []
    for src, dst in _read_tsv(links, 2):
        if src in drop or dst in drop:
            diag["disambiguation_dropped"] += 1
            continue
        if src == dst:
            diag["self_links"] += 1
            continue
        link_rows.append((ent_vocab.add(src), ent_vocab.add(dst)))

    anchor_rows = []
    for doc_id, offset, entity in _read_tsv(anchors, 3):
        if entity in drop:
            diag["disambiguation_dropped"] += 1
            continue
        ids = doc_ids.get(doc_id)
        if ids is None:
            diag["anchors_unknown_doc"] += 1
            continue
        pos = int(offset)
        if not 0 <= pos < len(ids):
            diag["anchors_out_of_bounds"] += 1
            log.warning("anchor %s@%s outside document bounds", doc_id, offset)
            continue
        ctx = np.concatenate([ids[max(0, pos - window):pos], ids[pos + 1:pos + 1 + window]])
        anchor_rows.append((ent_vocab.add(entity), ctx[ctx >= 0]))

    sentences = []
    for ids in doc_ids.values():
        # out-of-vocabulary words split a document so windows never bridge them
        for piece in np.split(ids, np.flatnonzero(ids < 0)):
            piece = piece[piece >= 0]
            if len(piece):
                sentences.append(piece)
    corpus = JointCorpus(words, ent_vocab, sentences,
                         np.array(link_rows, dtype=np.int64).reshape(-1, 2),
                         anchor_rows, window, diag)
    diag["pairs"] = corpus.pair_counts()
    return corpus


@dataclass(eq=False)
class JointSpace:
    words: Vocab
    entities: Vocab
    vectors: np.ndarray  # words first, then entities
    context: np.ndarray
    losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def entity_row(self, entity):
        idx = self.entities.get(entity)
        if idx is None:
            raise MissingEmbedding(entity)
        return len(self.words) + idx

    def word_row(self, word):
        idx = self.words.get(word)
        if idx is None:
            raise MissingEmbedding(word)
        return idx

    def entity_vector(self, entity):
        return self.vectors[self.entity_row(entity)]

    def word_vector(self, word):
        return self.vectors[self.word_row(word)]

    def entity_space(self):
        """Entity rows only, keyed by bare entity id (the re-ranker's view)."""
        n = len(self.words)
        return EmbeddingSpace(Vocab(self.entities), self.vectors[n:].copy())

    def as_embedding_space(self):
        """All rows, entity tokens prefixed with ``ENTITY/``."""
        tokens = Vocab(list(self.words) + [ENTITY_PREFIX + e for e in self.entities])
        return EmbeddingSpace(tokens, self.vectors)


def _stream_arrays(corpus, use_link_graph, symmetric_links):
    nw = len(corpus.words)
    c_w, o_w = context_pairs(corpus.documents, corpus.window)
    parts = [(c_w, o_w, np.full(len(c_w), WORD))]
    if use_link_graph and len(corpus.links):
        src, dst = corpus.links[:, 0] + nw, corpus.links[:, 1] + nw
        if symmetric_links:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        parts.append((src, dst, np.full(len(src), LINK)))
    if corpus.anchors:
        ent = np.concatenate([np.full(len(ctx), e + nw) for e, ctx in corpus.anchors])
        ctx = np.concatenate([c for _, c in corpus.anchors])
        parts.append((ent, ctx.astype(np.int64), np.full(len(ctx), ANCHOR)))
    centers = np.concatenate([p[0] for p in parts]).astype(np.int64)
    contexts = np.concatenate([p[1] for p in parts]).astype(np.int64)
    streams = np.concatenate([p[2] for p in parts]).astype(np.int64)
    return centers, contexts, streams


def train_joint(corpus, cfg=SgnsConfig(), use_link_graph=True, symmetric_links=True,
                callback=None, record_batches=False):
    """Train the joint word/entity objective on ``corpus``.

    With ``use_link_graph=False`` the entity-entity stream is omitted
    entirely. Per-epoch losses are dicts with ``L_w``, ``L_e``, ``L_a`` and
    ``total`` (mean per pair); ``record_batches`` additionally keeps the
    per-batch component sums in ``space.batch_losses``.
    """
    centers, contexts, streams = _stream_arrays(corpus, use_link_graph, symmetric_links)
    if len(centers) == 0:
        raise ValueError("joint corpus has no training pairs")
    nw, ne = len(corpus.words), len(corpus.entities)
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dimension
    V = ((rng.random((nw + ne, d)) - 0.5) / d).astype(dtype)
    U = np.zeros((nw + ne, d), dtype=dtype)
    space = JointSpace(corpus.words, corpus.entities, V, U)

    word_freq = np.bincount(np.concatenate(corpus.documents) if corpus.documents
                            else np.empty(0, np.int64), minlength=nw).astype(np.float64)
    word_noise = NoiseSampler(np.arange(nw), word_freq, cfg.noise_power)
    ent_freq = np.bincount(corpus.links.ravel(), minlength=ne).astype(np.float64)
    ent_noise = NoiseSampler(np.arange(ne) + nw, ent_freq, cfg.noise_power)
    k = cfg.negatives

    total_pairs = len(centers)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(total_pairs)
        c_all, o_all, s_all = centers[perm], contexts[perm], streams[perm]
        neg_all = np.empty((total_pairs, k), dtype=np.int64)
        if k:
            is_link = s_all == LINK
            if is_link.any():
                neg_all[is_link] = ent_noise(rng, (int(is_link.sum()), k))
            if (~is_link).any():
                neg_all[~is_link] = word_noise(rng, (int((~is_link).sum()), k))
        bs = cfg.batch_size
        n_batches = -(-total_pairs // bs)
        sums = np.zeros(3)
        epoch_total = 0.0
        for b in range(n_batches):
            progress = (epoch + b / n_batches) / cfg.epochs
            lr = cfg.learning_rate * max(cfg.min_lr_fraction, 1.0 - progress)
            sl = slice(b * bs, (b + 1) * bs)
            c, o, s, ng = c_all[sl], o_all[sl], s_all[sl], neg_all[sl]
            loss, gv, gu, gn = ns_loss_and_grads(V[c], U[o], U[ng])
            np.add.at(V, c, (-lr * gv).astype(dtype))
            np.add.at(U, o, (-lr * gu).astype(dtype))
            if k:
                np.add.at(U, ng.ravel(), (-lr * gn.reshape(-1, d)).astype(dtype))
            parts = np.bincount(s, weights=loss, minlength=3)
            batch_total = float(loss.sum(dtype=np.float64))
            sums += parts
            epoch_total += batch_total
            if record_batches:
                space.batch_losses.append((*parts.tolist(), batch_total))
        row = {name: sums[i] / total_pairs for i, name in enumerate(STREAMS)}
        row["total"] = epoch_total / total_pairs
        space.losses.append(row)
        log.info("joint epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, row["total"])
        if callback is not None:
            callback(epoch, space)
    return space


def write_joint(space, path):
    """Export in word2vec text format with entity rows prefixed ``ENTITY/``."""
    write_word2vec(space.as_embedding_space(), path)


def read_joint(path):
    flat = read_word2vec(path)
    words, ents, rows_w, rows_e = Vocab(), Vocab(), [], []
    for i, tok in enumerate(flat.tokens):
        if tok.startswith(ENTITY_PREFIX):
            ents.add(tok[len(ENTITY_PREFIX):])
            rows_e.append(i)
        else:
            words.add(tok)
            rows_w.append(i)
    vecs = flat.vectors[rows_w + rows_e]
    return JointSpace(words, ents, vecs, np.zeros_like(vecs))
