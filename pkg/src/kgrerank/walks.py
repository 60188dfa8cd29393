"""Random-walk sentence generation over a knowledge graph (RDF2Vec style)."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WalkConfig:
    depth: int = 4
    walks_per_entity: int = 100
    seed: int = 0
    include_relations: bool = True
    emit_singletons: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.walks_per_entity < 1:
            raise ValueError("walks_per_entity must be >= 1")


@dataclass(eq=False)
class WalkCorpus:
    """Walks as token-id sequences.

    Token ids ``0..|E|-1`` are entities; relation ``r`` is token ``|E| + r``
    when relations are included.
    """

    sequences: list
    tokens: list
    num_entities: int

    def __len__(self):
        return len(self.sequences)

    def sentences(self):
        """Yield walks as lists of token strings."""
        tok = self.tokens
        for seq in self.sequences:
            yield [tok[i] for i in seq]

    def __eq__(self, other):
        return (isinstance(other, WalkCorpus) and self.tokens == other.tokens
                and self.sequences == other.sequences)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for sent in self.sentences():
                fh.write(" ".join(sent))
                fh.write("\n")


def _entity_walks(entity, cfg, offsets, adj_rel, adj_tail, rel_offset):
    # per-entity stream keeps output independent of sharding
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, entity])
    n = cfg.walks_per_entity
    cols = [np.full(n, entity, dtype=np.int64)]
    alive = np.ones(n, dtype=bool)
    cur = cols[0].copy()
    lengths = np.ones(n, dtype=np.int64)
    for _ in range(cfg.depth):
        deg = offsets[cur + 1] - offsets[cur]
        alive &= deg > 0
        if not alive.any():
            break
        pick = offsets[cur] + np.floor(rng.random(n) * np.maximum(deg, 1)).astype(np.int64)
        pick = np.where(alive, pick, 0)
        rel = np.where(alive, adj_rel[pick] if len(adj_rel) else 0, -1)
        nxt = np.where(alive, adj_tail[pick] if len(adj_tail) else 0, -1)
        if cfg.include_relations:
            cols.append(np.where(alive, rel + rel_offset, -1))
        cols.append(nxt)
        cur = np.where(alive, nxt, cur)
        lengths += alive * (2 if cfg.include_relations else 1)
    mat = np.stack(cols, axis=1)
    return [mat[i, :lengths[i]].tolist() for i in range(n)]


def generate_walks(kg, cfg, workers=1):
    """Emit ``cfg.walks_per_entity`` uniform random walks of up to ``cfg.depth``
    hops from every entity with outgoing edges.

    Walks stop early at dead ends. Entities without outgoing edges yield
    one singleton walk when ``cfg.emit_singletons`` is set. Output order is
    (entity index, walk number) regardless of ``workers``.
    """
    if len(kg.entities) == 0:
        raise ValueError("knowledge graph is empty")
    offsets, adj_rel, adj_tail = kg.csr
    n_ent = len(kg.entities)
    tokens = list(kg.entities)
    if cfg.include_relations:
        rel_tokens = list(kg.relations)
        clash = set(tokens) & set(rel_tokens)
        if clash:
            raise ValueError(f"relation labels collide with entity ids: {sorted(clash)[:5]}")
        tokens += rel_tokens
    deg = np.diff(offsets)

    def run(entity):
        if deg[entity] == 0:
            return [[entity]] if cfg.emit_singletons else []
        return _entity_walks(entity, cfg, offsets, adj_rel, adj_tail, n_ent)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(run, range(n_ent)))
    else:
        chunks = [run(e) for e in range(n_ent)]
    sequences = [walk for chunk in chunks for walk in chunk]
    return WalkCorpus(sequences, tokens, n_ent)
