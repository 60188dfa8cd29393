"""Knowledge graph loading, interning, and redirect resolution.

Graphs are read from flat files (tab-separated triples or a minimal
N-Triples subset), interned to dense integer ids, and kept immutable after
construction.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import FormatError

log = logging.getLogger(__name__)

_NT_LINE = re.compile(r'^<([^>]+)>\s+<([^>]+)>\s+(?:<([^>]+)>|("(?:[^"\\]|\\.)*"\S*))\s*\.$')


class Vocab:
    """Bijection between strings and indices ``0..n-1`` in insertion order."""

    def __init__(self, items=()):
        self._items = []
        self._index = {}
        for item in items:
            self.add(item)

    def add(self, item):
        idx = self._index.get(item)
        if idx is None:
            if not item:
                raise ValueError("identifiers must be non-empty")
            idx = len(self._items)
            self._items.append(item)
            self._index[item] = idx
        return idx

    def index(self, item):
        return self._index[item]

    def get(self, item, default=None):
        return self._index.get(item, default)

    def string(self, idx):
        return self._items[idx]

    def __contains__(self, item):
        return item in self._index

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._items == other._items

    def __repr__(self):
        return f"Vocab({len(self)} items)"


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    entities: Vocab
    relations: Vocab
    edges: np.ndarray  # (n, 3) int64 rows of (head, relation, tail)
    redirects: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        # CSR out-adjacency, stable w.r.t. edge order
        order = np.argsort(edges[:, 0], kind="stable")
        counts = np.bincount(edges[:, 0], minlength=len(self.entities))
        offsets = np.zeros(len(self.entities) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_adj_rel", edges[order, 1])
        object.__setattr__(self, "_adj_tail", edges[order, 2])

    @classmethod
    def from_triples(cls, triples, redirects=None, diagnostics=None):
        """Build a graph from an iterable of ``(head, relation, tail)`` strings."""
        entities, relations = Vocab(), Vocab()
        rows = []
        for h, r, t in triples:
            rows.append((entities.add(h), relations.add(r), entities.add(t)))
        return cls(entities, relations, np.array(rows, dtype=np.int64).reshape(-1, 3),
                   dict(redirects or {}), dict(diagnostics or {}))

    @property
    def num_edges(self):
        return len(self.edges)

    def out_degree(self, entity=None):
        deg = np.diff(self._offsets)
        if entity is None:
            return deg
        return int(deg[entity])

    def out_edges(self, entity):
        """List of ``(relation, tail)`` index pairs leaving ``entity``."""
        lo, hi = self._offsets[entity], self._offsets[entity + 1]
        return list(zip(self._adj_rel[lo:hi].tolist(), self._adj_tail[lo:hi].tolist()))

    @property
    def csr(self):
        return self._offsets, self._adj_rel, self._adj_tail

    def triples(self):
        """Iterate edges as string triples."""
        ent, rel = self.entities.string, self.relations.string
        for h, r, t in self.edges.tolist():
            yield ent(h), rel(r), ent(t)

    def edge_set(self):
        return set(map(tuple, self.edges.tolist()))

    def canonical(self, entity_id):
        """Map an entity string through the resolved redirect table."""
        return self.redirects.get(entity_id, entity_id)


def _parse_tsv(line):
    parts = line.split("\t")
    if len(parts) != 3 or not all(p.strip() for p in parts):
        return None
    return tuple(p.strip() for p in parts), False


def _parse_nt(line):
    m = _NT_LINE.match(line)
    if m is None:
        return None
    head, rel, tail_iri, literal = m.groups()
    if tail_iri is not None:
        return (head, rel, tail_iri), False
    return (head, rel, literal), True


def load_triples(path, format="tsv", dedup=False, keep_literals=False):
    """Read a triple file into a :class:`KnowledgeGraph`.

    ``format`` is ``"tsv"`` (``head<TAB>relation<TAB>tail``) or
    ``"ntriples-lite"`` (``<s> <p> <o> .`` with IRI or literal objects).
    Blank and ``#`` lines are skipped; malformed lines are counted in
    ``kg.diagnostics``. Literal-valued objects are dropped unless
    ``keep_literals`` is set.
    """
    parse = {"tsv": _parse_tsv, "ntriples-lite": _parse_nt}.get(format)
    if parse is None:
        raise ValueError(f"unknown triple format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise OSError(f"cannot read triple file {path}: {exc}") from exc

    triples, seen = [], set()
    diag = {"lines": 0, "malformed": 0, "malformed_lines": [], "literals_dropped": 0,
            "duplicates_dropped": 0}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        diag["lines"] += 1
        parsed = parse(line.strip() if format != "tsv" else line)
        if parsed is None:
            diag["malformed"] += 1
            diag["malformed_lines"].append(lineno)
            continue
        triple, is_literal = parsed
        if is_literal and not keep_literals:
            diag["literals_dropped"] += 1
            continue
        if dedup:
            if triple in seen:
                diag["duplicates_dropped"] += 1
                continue
            seen.add(triple)
        triples.append(triple)
    if diag["malformed"]:
        log.warning("%s: skipped %d malformed line(s)", path, diag["malformed"])
    if not triples:
        raise FormatError("no valid triples", path=path)
    return KnowledgeGraph.from_triples(triples, diagnostics=diag)


def write_triples(kg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in kg.triples():
            fh.write(f"{h}\t{r}\t{t}\n")


def load_redirects(path):
    """Read ``from<TAB>to`` pairs; malformed lines raise :class:`FormatError`."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise FormatError("expected from<TAB>to", path=path, line=lineno)
            pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def compress_redirects(pairs):
    """Transitively close a redirect relation.

    Returns ``(mapping, report)`` where ``mapping`` sends every redirected
    id to its final target and never contains a target as a key. Cycles
    are collapsed onto their lexicographically smallest member.
    """
    nxt = {}
    report = {"self_redirects": 0, "conflicts": [], "cycles": []}
    for src, dst in pairs:
        if src == dst:
            report["self_redirects"] += 1
            continue
        if src in nxt and nxt[src] != dst:
            report["conflicts"].append(src)
            continue
        nxt[src] = dst

    final = {}
    for start in nxt:
        if start in final:
            continue
        path, on_path = [], {}
        node = start
        while True:
            if node in final:
                target = final[node]
                break
            if node in on_path:
                cycle = path[on_path[node]:]
                target = min(cycle)
                report["cycles"].append(sorted(cycle))
                break
            if node not in nxt:
                target = node
                break
            on_path[node] = len(path)
            path.append(node)
            node = nxt[node]
        for n in path:
            final[n] = target
        final.setdefault(target, target)
    mapping = {k: v for k, v in final.items() if k != v}
    return mapping, report


def resolve_redirects(kg, redirects):
    """Rewrite edge endpoints through transitively resolved redirects.

    ``redirects`` is a path to a redirect TSV, a mapping, or an iterable
    of ``(from, to)`` pairs. Previously applied redirects on ``kg`` are
    merged in, so resolution is idempotent.
    """
    if isinstance(redirects, (str, Path)):
        pairs = load_redirects(redirects)
    elif isinstance(redirects, dict):
        pairs = list(redirects.items())
    else:
        pairs = list(redirects)
    mapping, report = compress_redirects(list(kg.redirects.items()) + pairs)
    known = set(kg.entities)
    report["dangling_targets"] = sorted({t for t in mapping.values() if t not in known})
    for cyc in report["cycles"]:
        log.warning("redirect cycle %s collapsed onto %s", cyc, min(cyc))
    if report["dangling_targets"]:
        log.info("%d redirect target(s) not present in graph", len(report["dangling_targets"]))

    def canon(e):
        return mapping.get(e, e)

    resolved = [(canon(h), r, canon(t)) for h, r, t in kg.triples()]
    report["rewritten_endpoints"] = sum(
        (h != h2) + (t != t2) for (h, _, t), (h2, _, t2) in zip(kg.triples(), resolved))
    diag = dict(kg.diagnostics)
    diag["redirects"] = report
    return KnowledgeGraph.from_triples(resolved, redirects=mapping, diagnostics=diag)


@dataclass
class MissingEntityReport:
    no_page: list
    no_emb: list

    @property
    def counts(self):
        return {"no_page": len(self.no_page), "no_emb": len(self.no_emb)}

    def rows(self):
        for e in self.no_page:
            yield "no_page", e
        for e in self.no_emb:
            yield "no_emb", e


def missing_entities(kg, space, assessed):
    """Split assessed entity ids into those absent from the graph (``no_page``)
    and those in the graph but without a vector in ``space`` (``no_emb``).

    Assessed ids are canonicalised through the graph's redirects first.
    ``space`` only needs to support ``in``.
    """
    no_page, no_emb, seen = [], [], set()
    for raw in assessed:
        e = kg.canonical(raw)
        if e in seen:
            continue
        seen.add(e)
        if e not in kg.entities:
            no_page.append(e)
        elif e not in space:
            no_emb.append(e)
    return MissingEntityReport(no_page, no_emb)


def write_missing_report(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "entity_id"])
        w.writerows(report.rows())
