"""Query entity annotations and lean precision/recall for entity linking.

A query's annotation is a list of interpretations; each interpretation is
a set of linked entities with confidences. Lean evaluation averages an
interpretation-level score (exact set matches) with an entity-level score
(union of all interpretations).
"""

import csv
import json
import logging
from dataclasses import dataclass, fields
from typing import Optional

from . import FormatError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkedEntity:
    entity: str
    confidence: float = 1.0
    mention: Optional[str] = None

    def __post_init__(self):
        if not self.entity:
            raise ValueError("entity id must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


class Interpretation(tuple):
    """Immutable, non-empty collection of :class:`LinkedEntity` with unique ids."""

    def __new__(cls, linked):
        linked = tuple(x if isinstance(x, LinkedEntity) else LinkedEntity(*x) for x in linked)
        if not linked:
            raise ValueError("an interpretation must contain at least one entity")
        ids = [x.entity for x in linked]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate entity in interpretation: {ids}")
        return super().__new__(cls, linked)

    @property
    def entity_set(self):
        return frozenset(x.entity for x in self)


@dataclass
class QueryAnnotations:
    query_id: str
    interpretations: list
    query: Optional[str] = None

    def __post_init__(self):
        self.interpretations = [i if isinstance(i, Interpretation) else Interpretation(i)
                                for i in self.interpretations]

    def interpretation_sets(self):
        return {i.entity_set for i in self.interpretations}

    def entity_union(self):
        out = set()
        for i in self.interpretations:
            out |= i.entity_set
        return out


@dataclass(frozen=True)
class LeanScores:
    P_int: float
    R_int: float
    P_ent: float
    R_ent: float
    P_lean: float
    R_lean: float
    F_lean: float
    F_lean_mean: Optional[float] = None  # set only by macro_average

    @classmethod
    def from_components(cls, p_int, r_int, p_ent, r_ent):
        p = (p_int + p_ent) / 2
        r = (r_int + r_ent) / 2
        return cls(p_int, r_int, p_ent, r_ent, p, r, f_measure(p, r))


def f_measure(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _set_pr(system, gold):
    """Precision and recall of two sets with the empty-set conventions."""
    hit = len(system & gold)
    if system:
        p = hit / len(system)
    else:
        p = 1.0 if not gold else 0.0
    if gold:
        r = hit / len(gold)
    else:
        r = 1.0 if not system else 0.0
    return p, r


def lean_eval(system, gold):
    """Lean precision/recall of one query's system annotation against gold."""
    if system.query_id != gold.query_id:
        raise ValueError(f"query id mismatch: {system.query_id!r} vs {gold.query_id!r}")
    p_int, r_int = _set_pr(system.interpretation_sets(), gold.interpretation_sets())
    p_ent, r_ent = _set_pr(system.entity_union(), gold.entity_union())
    return LeanScores.from_components(p_int, r_int, p_ent, r_ent)


def macro_average(per_query):
    """Per-field mean. ``F_lean`` is recomputed from the mean P/R; the mean of
    per-query F values is kept in ``F_lean_mean``."""
    per_query = list(per_query)
    if not per_query:
        raise ValueError("cannot average an empty list of scores")
    n = len(per_query)
    mean = {f.name: sum(getattr(s, f.name) for s in per_query) / n
            for f in fields(LeanScores) if f.name not in ("F_lean", "F_lean_mean")}
    return LeanScores(F_lean=f_measure(mean["P_lean"], mean["R_lean"]),
                      F_lean_mean=sum(s.F_lean for s in per_query) / n, **mean)


def evaluate_collection(system, gold):
    """Lean scores for every gold query. Queries the system did not annotate
    count as empty annotations. Returns ``(per_query dict, macro)``."""
    extra = set(system) - set(gold)
    if extra:
        log.warning("%d system queries have no gold annotation; ignored", len(extra))
    per_query = {}
    for qid, g in gold.items():
        s = system.get(qid) or QueryAnnotations(qid, [])
        per_query[qid] = lean_eval(s, g)
    return per_query, macro_average(per_query.values())


def union_annotations(annotations):
    """Merge several linkers' output for one query into a single
    interpretation; a repeated entity keeps its highest confidence."""
    annotations = list(annotations)
    if not annotations:
        raise ValueError("nothing to merge")
    qid = annotations[0].query_id
    best = {}
    query = None
    for ann in annotations:
        if ann.query_id != qid:
            raise ValueError(f"query id mismatch: {qid!r} vs {ann.query_id!r}")
        query = query or ann.query
        for interp in ann.interpretations:
            for le in interp:
                cur = best.get(le.entity)
                if cur is None or le.confidence > cur.confidence:
                    best[le.entity] = le
    interps = [Interpretation(best.values())] if best else []
    return QueryAnnotations(qid, interps, query)


def _from_json(obj, path, index):
    try:
        interps = [Interpretation(LinkedEntity(str(x["entity"]), float(x.get("confidence", 1.0)),
                                               x.get("mention")) for x in interp)
                   for interp in obj["interpretations"]]
        return QueryAnnotations(str(obj["query_id"]), interps, obj.get("query"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"annotation record {index}: {exc}", path=path) from exc


def read_annotations(path):
    """Read an annotations JSON file into an ordered ``{query_id: QueryAnnotations}``."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path=path, line=exc.lineno) from exc
    if not isinstance(data, list):
        raise FormatError("expected a JSON list of query records", path=path)
    out = {}
    for i, obj in enumerate(data):
        ann = _from_json(obj, path, i)
        if ann.query_id in out:
            raise FormatError(f"duplicate query_id {ann.query_id!r}", path=path)
        out[ann.query_id] = ann
    return out


def _to_json(ann):
    rec = {"query_id": ann.query_id}
    if ann.query is not None:
        rec["query"] = ann.query
    rec["interpretations"] = []
    for interp in ann.interpretations:
        items = []
        for le in interp:
            item = {"entity": le.entity}
            if le.mention is not None:
                item["mention"] = le.mention
            item["confidence"] = le.confidence
            items.append(item)
        rec["interpretations"].append(items)
    return rec


def write_annotations(annotations, path):
    if isinstance(annotations, dict):
        annotations = annotations.values()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([_to_json(a) for a in annotations], fh, ensure_ascii=False, indent=2)
        fh.write("\n")


REPORT_FIELDS = ("P_int", "R_int", "P_ent", "R_ent", "P_lean", "R_lean", "F_lean")


def write_lean_report(per_query, macro, out):
    """CSV with one row per query and a final ``MACRO`` row.

    ``out`` is a path or a text stream.
    """
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("query_id",) + REPORT_FIELDS + ("F_lean_mean",))
        for qid, s in per_query.items():
            w.writerow([qid] + [f"{getattr(s, f):.6f}" for f in REPORT_FIELDS] + [""])
        w.writerow(["MACRO"] + [f"{getattr(macro, f):.6f}" for f in REPORT_FIELDS]
                   + [f"{macro.F_lean_mean:.6f}"])

    if hasattr(out, "write"):
        emit(out)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
