"""TREC run and qrels files."""

from collections import OrderedDict

from . import FormatError

GRADES = (0, 1, 2)


class RankedRun:
    """Per-query ranked entity lists with scores.

    ``queries`` maps query id to a list of ``(entity, score)`` in rank order;
    ranks are implicit (1-based list position).
    """

    def __init__(self, queries=None, tag="run"):
        self.tag = tag
        self.queries = OrderedDict()
        self.diagnostics = {}
        for qid, items in (queries or {}).items():
            self.add_query(qid, items)

    def add_query(self, qid, items):
        items = [(str(e), float(s)) for e, s in items]
        seen = set()
        for e, _ in items:
            if e in seen:
                raise ValueError(f"duplicate entity {e!r} in query {qid!r}")
            seen.add(e)
        self.queries[qid] = items

    def __contains__(self, qid):
        return qid in self.queries

    def __getitem__(self, qid):
        return self.queries[qid]

    def __iter__(self):
        return iter(self.queries)

    def __len__(self):
        return len(self.queries)

    def entities(self, qid):
        return [e for e, _ in self.queries[qid]]

    def rows(self):
        """Yield ``(qid, entity, rank, score)``."""
        for qid, items in self.queries.items():
            for rank, (e, s) in enumerate(items, 1):
                yield qid, e, rank, s

    def is_sorted(self):
        return all(all(a[1] >= b[1] for a, b in zip(items, items[1:]))
                   for items in self.queries.values())


def format_score(score):
    return f"{score:.6g}"


def write_run(run, out):
    def emit(fh):
        for qid, e, rank, s in run.rows():
            fh.write(f"{qid} Q0 {e} {rank} {format_score(s)} {run.tag}\n")

    if hasattr(out, "write"):
        emit(out)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            emit(fh)


def read_run(path):
    """Read a six-column TREC run; entries are ordered by their rank column."""
    raw = OrderedDict()
    tag = None
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(f"expected 6 columns, got {len(parts)}", path=path, line=lineno)
            qid, _q0, entity, rank, score, run_tag = parts
            try:
                rank, score = int(rank), float(score)
            except ValueError:
                raise FormatError("rank must be an integer and score a number",
                                  path=path, line=lineno) from None
            if (qid, entity) in seen:
                raise FormatError(f"duplicate entity {entity!r} for query {qid!r}",
                                  path=path, line=lineno)
            seen.add((qid, entity))
            tag = tag or run_tag
            raw.setdefault(qid, []).append((rank, lineno, entity, score))
    if tag is None:
        raise FormatError("run file is empty", path=path)
    run = RankedRun(tag=tag)
    for qid, items in raw.items():
        items.sort()
        run.add_query(qid, [(e, s) for _, _, e, s in items])
    return run


class Qrels(OrderedDict):
    """``{query_id: {entity: grade}}`` with grades in {0, 1, 2}."""

    def relevant(self, qid, min_grade=1):
        return [e for e, g in self.get(qid, {}).items() if g >= min_grade]


def read_qrels(path):
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"expected 4 columns, got {len(parts)}", path=path, line=lineno)
            qid, _it, entity, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise FormatError(f"grade {grade!r} is not an integer", path=path,
                                  line=lineno) from None
            if grade not in GRADES:
                raise FormatError(f"grade {grade} outside {GRADES}", path=path, line=lineno)
            judged = qrels.setdefault(qid, OrderedDict())
            if entity in judged:
                raise FormatError(f"duplicate judgment for {qid} {entity}", path=path,
                                  line=lineno)
            judged[entity] = grade
    return qrels


def write_qrels(qrels, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, judged in qrels.items():
            for entity, grade in judged.items():
                fh.write(f"{qid} 0 {entity} {grade}\n")
