import json
import subprocess
import sys

import numpy as np
import pytest

from kgrerank.cli import build_parser, main
from kgrerank.linking import LinkedEntity, QueryAnnotations, write_annotations
from kgrerank.trec import RankedRun, read_run, write_qrels, write_run
from kgrerank.sgns import read_word2vec

from synthetic import clustered_graph, collection_for, kinship

TRIPLES = "a\tp\tb\nb\tp\tc\nc\tq\ta\nbroken line\nd\tp\tOld\n"


@pytest.fixture
def graph(write):
    return write("kg.tsv", TRIPLES)


def test_ingest(graph, write, tmp_path, capsys):
    redirects = write("redir.tsv", "Old\tc\n")
    assessed = write("assessed.txt", "a\nOld\nzz\n")
    out = tmp_path / "ing"
    assert main(["ingest", "--triples", str(graph), "--redirects", str(redirects),
                 "--assessed", str(assessed), "--out", str(out)]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed == {"entities": "4", "relations": "2", "edges": "4", "malformed": "1"}
    assert (out / "entities.txt").read_text().split() == ["a", "b", "c", "d"]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["malformed"] == 1
    assert (out / "missing.csv").read_text().splitlines()[0] == "bucket,entity_id"


def test_missing_required_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_unreadable_file_exits_2(tmp_path):
    assert main(["ingest", "--triples", str(tmp_path / "nope.tsv"), "--out", str(tmp_path)]) == 2


def test_bad_content_exits_1(write, tmp_path):
    bad = write("bad.tsv", "only two\n")
    assert main(["ingest", "--triples", str(bad), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("cmd", [[], ["ingest"], ["walks"], ["train"], ["rerank"], ["eval"],
                                 ["coherence"], ["lean"]])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main(cmd + ["--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_walks_and_sgns_are_reproducible(graph, tmp_path):
    one, two = tmp_path / "w1.txt", tmp_path / "w2.txt"
    for out in (one, two):
        assert main(["walks", "--triples", str(graph), "--walks", "3", "--out", str(out)]) == 0
    assert one.read_bytes() == two.read_bytes()
    first = one.read_text().splitlines()[0].split()
    assert first[0] == "a"

    e1, e2 = tmp_path / "e1.txt", tmp_path / "e2.txt"
    for out in (e1, e2):
        assert main(["train", "sgns", "--corpus", str(one), "--dim", "8", "--epochs", "2",
                     "--out", str(out), "--loss-log", str(tmp_path / "loss.csv")]) == 0
    assert e1.read_bytes() == e2.read_bytes()
    space = read_word2vec(e1)
    assert space.dim == 8 and "a" in space
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "epoch,loss"


def test_train_sgns_needs_one_source(graph, tmp_path):
    assert main(["train", "sgns", "--out", str(tmp_path / "e.txt")]) == 1


def test_config_file_supplies_defaults(graph, write, tmp_path):
    cfg = write("run.cfg", f"# walk settings\ntriples = {graph}\nwalks = 2\n")
    out = tmp_path / "w.txt"
    assert main(["--config", str(cfg), "walks", "--out", str(out)]) == 0
    starts = lambda: [line.split()[0] for line in out.read_text().splitlines()]
    assert starts().count("a") == 2
    assert main(["--config", str(cfg), "walks", "--walks", "1", "--out", str(out)]) == 0
    assert starts().count("a") == 1


def test_train_complex_reports_link_prediction(tmp_path, capsys):
    kg, train, test = kinship()
    lines = lambda rows: "".join(
        f"{kg.entities.string(h)}\t{kg.relations.string(r)}\t{kg.entities.string(t)}\n"
        for h, r, t in rows)
    (tmp_path / "all.tsv").write_text(lines(kg.edges))
    (tmp_path / "test.tsv").write_text(lines(test))
    assert main(["train", "complex", "--triples", str(tmp_path / "all.tsv"),
                 "--test", str(tmp_path / "test.tsv"), "--dim", "8", "--epochs", "5",
                 "--out", str(tmp_path / "cx")]) == 0
    report = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert set(report) == {"mrr", "filtered_mrr", "hits@1", "hits@3", "hits@10", "random_mrr"}
    assert float(report["filtered_mrr"]) >= float(report["mrr"])
    assert (tmp_path / "cx.entities.txt").exists() and (tmp_path / "cx.relations.txt").exists()


def test_train_joint(write, tmp_path):
    docs = write("docs.tsv", "d1\tthe cat sat on the mat\nd2\tdogs chase cats\n")
    links = write("links.tsv", "Cat\tDog\n")
    anchors = write("anchors.tsv", "d1\t1\tCat\nd2\t0\tDog\n")
    out = tmp_path / "joint.txt"
    assert main(["train", "joint", "--docs", str(docs), "--links", str(links), "--anchors",
                 str(anchors), "--dim", "4", "--epochs", "2", "--window", "2",
                 "--out", str(out), "--loss-log", str(tmp_path / "l.csv")]) == 0
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "epoch,L_w,L_e,L_a,total"


@pytest.fixture
def collection(tmp_path):
    triples, names = clustered_graph(clusters=3, size=6, out_degree=2)
    baseline, annotations, qrels = collection_for(names, clusters=3, size=6, distractors=5)
    rng = np.random.default_rng(0)
    emb = tmp_path / "emb.txt"
    emb.write_text(f"{len(names)} 4\n" + "".join(
        f"{n} " + " ".join(f"{x:.4f}" for x in rng.normal(size=4)) + "\n" for n in names))
    write_run(baseline, tmp_path / "base.run")
    write_annotations(annotations, tmp_path / "ann.json")
    write_qrels(qrels, tmp_path / "qrels.txt")
    return tmp_path


def test_rerank_lambda_zero_keeps_order(collection):
    d = collection
    assert main(["rerank", "--run", str(d / "base.run"), "--ann", str(d / "ann.json"),
                 "--emb", str(d / "emb.txt"), "--lambda", "0", "--out", str(d / "re.run")]) == 0
    base, re = read_run(d / "base.run"), read_run(d / "re.run")
    assert [re.entities(q) for q in re] == [base.entities(q) for q in base]


def test_rerank_sweep_and_eval(collection, capsys):
    d = collection
    assert main(["rerank", "--run", str(d / "base.run"), "--ann", str(d / "ann.json"),
                 "--emb", str(d / "emb.txt"), "--lambda-sweep", "0,0.5,1",
                 "--qrels", str(d / "qrels.txt")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "lambda,ndcg@10,ndcg@100,best"
    assert len(rows) == 4 and sum(r.endswith("*") for r in rows) == 1

    assert main(["rerank", "--run", str(d / "base.run"), "--ann", str(d / "ann.json"),
                 "--emb", str(d / "emb.txt"), "--lambda-sweep", "0,1"]) == 1

    assert main(["rerank", "--run", str(d / "base.run"), "--ann", str(d / "ann.json"),
                 "--emb", str(d / "emb.txt"), "--lambda", "1", "--out", str(d / "re.run")]) == 0
    assert main(["eval", "--run", str(d / "re.run"), "--qrels", str(d / "qrels.txt"),
                 "--compare", str(d / "base.run")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "query_id,ndcg@10,ndcg@100"
    assert any(line.startswith("ALL,") for line in out)
    assert any(line.startswith("metric,run_a,run_b,t,p") for line in out)


def test_coherence_command(collection, capsys):
    d = collection
    assert main(["coherence", "--qrels", str(d / "qrels.txt"), "--emb", str(d / "emb.txt"),
                 "--min-rel", "3"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "query_id,M,dropped,tau,coherence"
    assert len(rows) == 4


def test_lean_command(tmp_path, capsys):
    gold = {"q": QueryAnnotations("q", [[LinkedEntity("A"), LinkedEntity("B")]])}
    system = {"q": QueryAnnotations("q", [[LinkedEntity("A")]])}
    write_annotations(gold, tmp_path / "g.json")
    write_annotations(system, tmp_path / "s.json")
    assert main(["lean", "--system", str(tmp_path / "s.json"),
                 "--gold", str(tmp_path / "g.json")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[-1].startswith("MACRO,0.000000,0.000000,1.000000,0.500000,0.500000,0.250000")


def test_console_script_entry_point(graph, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kgrerank.cli", "ingest", "--triples",
                           str(graph), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("entities\t5")


def test_parser_lists_all_commands():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"ingest", "walks", "train", "rerank", "eval", "coherence", "lean"}
