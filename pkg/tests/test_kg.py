import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrerank import FormatError
from kgrerank.kg import (KnowledgeGraph, Vocab, compress_redirects, load_triples,
                         missing_entities, resolve_redirects, write_missing_report,
                         write_triples)


def test_load_three_line_tsv(write):
    kg = load_triples(write("g.tsv", "a\tp\tb\nb\tp\tc\na\tq\tc\n"))
    assert len(kg.entities) == 3
    assert len(kg.relations) == 2
    assert kg.num_edges == 3


def test_empty_file_is_an_error(write):
    with pytest.raises(FormatError, match="no valid triples"):
        load_triples(write("g.tsv", ""))


def test_comments_only_is_an_error(write):
    with pytest.raises(FormatError):
        load_triples(write("g.tsv", "# nothing here\n\n"))


def test_unreadable_file(tmp_path):
    with pytest.raises(OSError):
        load_triples(tmp_path / "missing.tsv")


def test_malformed_line_skipped_and_counted(write):
    kg = load_triples(write("g.tsv", "a\tp\tb\nbroken line\nb\tp\tc\nc\tp\ta\n"))
    assert kg.num_edges == 3
    assert kg.diagnostics["malformed"] == 1
    assert kg.diagnostics["malformed_lines"] == [2]


def test_duplicates_kept_unless_dedup(write):
    path = write("g.tsv", "a\tp\tb\na\tp\tb\n")
    assert load_triples(path).num_edges == 2
    kg = load_triples(path, dedup=True)
    assert kg.num_edges == 1
    assert kg.diagnostics["duplicates_dropped"] == 1


def test_ntriples_lite_drops_literals(write):
    text = ('<a> <p> <b> .\n'
            '<a> <label> "Alpha"@en .\n'
            '<b> <p> <c> .\n')
    kg = load_triples(write("g.nt", text), format="ntriples-lite")
    assert kg.num_edges == 2
    assert kg.diagnostics["literals_dropped"] == 1
    assert "a" in kg.entities and "c" in kg.entities


def test_exact_identifier_matching(write):
    kg = load_triples(write("g.tsv", "Foo_Bar\tp\tfoo bar\n"))
    assert len(kg.entities) == 2


def test_out_adjacency_matches_edges():
    kg = KnowledgeGraph.from_triples([("a", "p", "b"), ("b", "p", "c"), ("a", "q", "c"),
                                      ("a", "p", "b")])
    adj = sorted((h, r, t) for h in range(len(kg.entities)) for r, t in kg.out_edges(h))
    assert adj == sorted(map(tuple, kg.edges.tolist()))
    assert kg.out_degree(kg.entities.index("c")) == 0


def test_graph_is_read_only():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    with pytest.raises(ValueError):
        kg.edges[0, 0] = 1


@given(st.lists(st.text(min_size=1, max_size=5), min_size=1, max_size=30))
def test_interning_round_trip(items):
    v = Vocab(items)
    for s in items:
        assert v.string(v.index(s)) == s
    assert sorted(v.index(s) for s in set(items)) == list(range(len(set(items))))


def test_serialize_round_trip(tmp_path, write):
    kg = load_triples(write("g.tsv", "a\tp\tb\nb\tq\tc\na\tp\tb\n"))
    write_triples(kg, tmp_path / "out.tsv")
    kg2 = load_triples(tmp_path / "out.tsv")
    assert sorted(kg.triples()) == sorted(kg2.triples())


def test_single_redirect():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    out = resolve_redirects(kg, {"b": "c"})
    assert list(out.triples()) == [("a", "p", "c")]


def test_redirect_chain():
    mapping, _ = compress_redirects([("b", "c"), ("c", "d")])
    assert mapping == {"b": "d", "c": "d"}


def test_redirect_cycle_breaks_to_smallest():
    mapping, report = compress_redirects([("x", "y"), ("y", "x")])
    assert mapping == {"y": "x"}
    assert report["cycles"] == [["x", "y"]]
    kg = KnowledgeGraph.from_triples([("x", "p", "z"), ("y", "p", "z")])
    out = resolve_redirects(kg, [("x", "y"), ("y", "x")])
    assert list(out.triples()) == [("x", "p", "z"), ("x", "p", "z")]


def test_self_redirect_dropped_and_dangling_reported():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    out = resolve_redirects(kg, [("a", "a"), ("b", "nowhere")])
    rep = out.diagnostics["redirects"]
    assert rep["self_redirects"] == 1
    assert rep["dangling_targets"] == ["nowhere"]
    assert list(out.triples()) == [("a", "p", "nowhere")]


def test_redirect_file(write):
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    out = resolve_redirects(kg, write("r.tsv", "b\tc\n"))
    assert out.redirects == {"b": "c"}


redirect_pairs = st.lists(st.tuples(st.sampled_from("abcdefg"), st.sampled_from("abcdefg")),
                          max_size=12)
edges = st.lists(st.tuples(st.sampled_from("abcdefgh"), st.sampled_from("pq"),
                           st.sampled_from("abcdefgh")), min_size=1, max_size=15)


@settings(max_examples=200)
@given(edges, redirect_pairs)
def test_resolution_idempotent_and_clean(triples, pairs):
    kg = KnowledgeGraph.from_triples(triples)
    once = resolve_redirects(kg, pairs)
    twice = resolve_redirects(once, pairs)
    assert list(once.triples()) == list(twice.triples())
    assert once.redirects == twice.redirects
    for h, _, t in once.triples():
        assert h not in once.redirects and t not in once.redirects
    # compressed map never chains
    assert not set(once.redirects.values()) & set(once.redirects)


def test_missing_entities_buckets():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    rep = missing_entities(kg, {"a"}, ["a", "b", "z"])
    assert rep.no_page == ["z"]
    assert rep.no_emb == ["b"]
    assert set(rep.no_page).isdisjoint(rep.no_emb)


def test_missing_entities_none_missing():
    kg = KnowledgeGraph.from_triples([("a", "p", "b")])
    rep = missing_entities(kg, {"a", "b"}, ["a", "b"])
    assert rep.counts == {"no_page": 0, "no_emb": 0}


def test_missing_entities_follow_redirects(tmp_path):
    kg = resolve_redirects(KnowledgeGraph.from_triples([("a", "p", "b")]), {"old_b": "b"})
    rep = missing_entities(kg, {"a", "b"}, ["old_b"])
    assert rep.counts == {"no_page": 0, "no_emb": 0}
    write_missing_report(missing_entities(kg, {"a"}, ["b", "z"]), tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "bucket,entity_id\nno_page,z\nno_emb,b\n"
