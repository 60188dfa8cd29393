"""Command-line entry point: ``kgrerank <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 I/O or usage failure.
Logs go to stderr; data goes to files or stdout.
"""

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

from . import FormatError, __version__
from .complex import TrainConfig, evaluate_link_prediction, random_mrr, train_complex, write_complex
from .evaluation import coherence_report, evaluate_run, paired_ttest, write_eval_report
from .joint import build_joint_corpus, train_joint, write_joint
from .kg import (load_triples, missing_entities, resolve_redirects,
                 write_missing_report, write_triples)
from .linking import evaluate_collection, read_annotations, write_lean_report
from .rerank import RerankConfig, rerank_run, sweep_lambda
from .sgns import SgnsConfig, read_word2vec, train_skipgram, write_word2vec
from .trec import read_qrels, read_run, write_run
from .walks import WalkConfig, generate_walks

log = logging.getLogger("kgrerank")


class ValidationError(Exception):
    pass


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def read_config(path):
    """``key = value`` lines; ``#`` comments; keys use flag spelling without dashes."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError("expected key = value", path=path, line=lineno)
            out[key.strip().replace("-", "_")] = value.strip().strip('"')
    return out


def _out_stream(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args):
    kg = load_triples(args.triples, args.format, dedup=args.dedup)
    if args.redirects:
        kg = resolve_redirects(kg, args.redirects)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_triples(kg, out / "triples.tsv")
    (out / "entities.txt").write_text("".join(e + "\n" for e in kg.entities), encoding="utf-8")
    (out / "relations.txt").write_text("".join(r + "\n" for r in kg.relations), encoding="utf-8")
    if args.assessed:
        assessed = [ln.strip() for ln in Path(args.assessed).read_text(encoding="utf-8").splitlines()
                    if ln.strip()]
        space = read_word2vec(args.emb) if args.emb else set()
        report = missing_entities(kg, space, assessed)
        write_missing_report(report, out / "missing.csv")
        kg.diagnostics["missing"] = report.counts
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(kg.diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"entities\t{len(kg.entities)}")
    print(f"relations\t{len(kg.relations)}")
    print(f"edges\t{kg.num_edges}")
    print(f"malformed\t{kg.diagnostics.get('malformed', 0)}")
    return 0


def _load_graph(args):
    kg = load_triples(args.triples, args.format)
    if getattr(args, "redirects", None):
        kg = resolve_redirects(kg, args.redirects)
    return kg


def _walk_config(args):
    return WalkConfig(depth=args.walk_depth, walks_per_entity=args.walks, seed=args.seed,
                      include_relations=not args.no_relations)


def cmd_walks(args):
    corpus = generate_walks(_load_graph(args), _walk_config(args), workers=args.workers)
    corpus.write(args.out)
    log.info("wrote %d walks to %s", len(corpus), args.out)
    return 0


def _sgns_config(args):
    return SgnsConfig(dimension=args.dim, window=args.window, negatives=args.negatives,
                      epochs=args.epochs, learning_rate=args.lr, min_count=args.min_count,
                      subsample_threshold=args.sample, seed=args.seed,
                      batch_size=args.batch_size, workers=args.workers)


def _write_loss_log(path, rows):
    if not path:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if rows and isinstance(rows[0], dict):
            keys = list(rows[0])
            w.writerow(["epoch"] + keys)
            for i, r in enumerate(rows, 1):
                w.writerow([i] + [f"{r[k]:.6f}" for k in keys])
        else:
            w.writerow(["epoch", "loss"])
            for i, r in enumerate(rows, 1):
                w.writerow([i, f"{r:.6f}"])


def cmd_train(args):
    family = args.family
    if family == "sgns":
        if bool(args.triples) == bool(args.corpus):
            raise ValidationError("train sgns needs exactly one of --triples or --corpus")
        if args.triples:
            corpus = generate_walks(_load_graph(args), _walk_config(args), workers=args.workers)
        else:
            corpus = [ln.split() for ln in Path(args.corpus).read_text(encoding="utf-8").splitlines()
                      if ln.strip()]
        space = train_skipgram(corpus, _sgns_config(args))
        write_word2vec(space, args.out)
        _write_loss_log(args.loss_log, space.losses)
    elif family == "joint":
        if not args.docs:
            raise ValidationError("train joint needs --docs")
        corpus = build_joint_corpus(args.docs, args.links, args.anchors, window=args.window,
                                    min_count=args.min_count)
        space = train_joint(corpus, _sgns_config(args), use_link_graph=not args.no_link_graph)
        write_joint(space, args.out)
        _write_loss_log(args.loss_log, space.losses)
    else:
        if not args.triples:
            raise ValidationError("train complex needs --triples")
        kg = _load_graph(args)
        cfg = TrainConfig(dimension=args.dim, epochs=args.epochs, learning_rate=args.lr,
                          negatives_per_positive=args.negatives, batch_size=args.batch_size,
                          seed=args.seed, regularization=args.reg)
        train_idx = None
        test = None
        if args.test:
            test_kg = load_triples(args.test, args.format)
            test = []
            for h, r, t in test_kg.triples():
                if h not in kg.entities or t not in kg.entities or r not in kg.relations:
                    raise ValidationError(f"test triple ({h}, {r}, {t}) uses unknown ids")
                test.append((kg.entities.index(h), kg.relations.index(r), kg.entities.index(t)))
            held = set(test)
            train_idx = [tr for tr in kg.edges.tolist() if tuple(tr) not in held]
        space = train_complex(kg, cfg, triples=train_idx)
        stem = Path(args.out)
        write_complex(space, f"{stem}.entities.txt", f"{stem}.relations.txt")
        _write_loss_log(args.loss_log, space.losses)
        if test:
            res = evaluate_link_prediction(space, test, kg.edge_set() | set(test))
            print(f"mrr\t{res['mrr']:.6f}")
            print(f"filtered_mrr\t{res['filtered_mrr']:.6f}")
            for k in (1, 3, 10):
                print(f"hits@{k}\t{res[f'hits@{k}']:.6f}")
            print(f"random_mrr\t{random_mrr(len(kg.entities)):.6f}")
    return 0


def cmd_rerank(args):
    baseline = read_run(args.run)
    annotations = read_annotations(args.ann)
    space = read_word2vec(args.emb)
    sweep = _floats(args.lambda_sweep) if args.lambda_sweep else None
    cfg = RerankConfig(lam=args.lam, normalization=args.normalization, missing=args.missing,
                       depth=args.depth)
    if sweep is not None:
        if not args.qrels:
            raise ValidationError("--lambda-sweep needs --qrels")
        rows = sweep_lambda(baseline, annotations, space, read_qrels(args.qrels), sweep, cfg)
        with _out_stream(args.sweep_out) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "ndcg@10", "ndcg@100", "best"])
            for r in rows:
                w.writerow([f"{r['lambda']:g}", f"{r['ndcg@10']:.6f}", f"{r['ndcg@100']:.6f}",
                            "*" if r["best"] else ""])
        if not args.out:
            return 0
    run = rerank_run(baseline, annotations, space, cfg, tag=args.tag)
    for k, v in run.diagnostics.items():
        log.info("rerank %s: %s", k, v)
    if args.out in (None, "-"):
        write_run(run, sys.stdout)
    else:
        write_run(run, args.out)
    return 0


def cmd_eval(args):
    qrels = read_qrels(args.qrels)
    ks = _ints(args.k)
    run = read_run(args.run)
    res = evaluate_run(run, qrels, ks, gain_mode=args.gain)
    if args.out in (None, "-"):
        write_eval_report(res, sys.stdout)
    else:
        write_eval_report(res, args.out)
    if args.compare:
        other = read_run(args.compare)
        res_b = evaluate_run(other, qrels, ks, gain_mode=args.gain)
        fh = sys.stdout if args.out in (None, "-") else sys.stderr
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "run_a", "run_b", "t", "p", "significant"])
        qids = list(res.per_query)
        for k in ks:
            tt = paired_ttest(res.values(k, qids), res_b.values(k, qids))
            w.writerow([f"ndcg@{k}", run.tag, other.tag, f"{tt.t:.6f}", f"{tt.p:.6g}",
                        "*" if tt.significant() else ""])
    return 0


def cmd_coherence(args):
    qrels = read_qrels(args.qrels)
    space = read_word2vec(args.emb)
    report = coherence_report(qrels, space, tau=args.tau, min_rel=args.min_rel)
    if args.out in (None, "-"):
        report.write(sys.stdout)
    else:
        report.write(args.out)
    log.info("coherence: %d queries, mean %.4f, %d excluded", len(report.rows), report.mean,
             len(report.excluded))
    return 0


def cmd_lean(args):
    per_query, macro = evaluate_collection(read_annotations(args.system),
                                           read_annotations(args.gold))
    if args.out in (None, "-"):
        write_lean_report(per_query, macro, sys.stdout)
    else:
        write_lean_report(per_query, macro, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _graph_args(p, required=False):
    p.add_argument("--triples", required=required, help="triple file")
    p.add_argument("--format", default="tsv", choices=["tsv", "ntriples-lite"],
                   help="triple file format (default: tsv)")
    p.add_argument("--redirects", help="redirect TSV (from<TAB>to) applied after loading")


def _walk_args(p):
    p.add_argument("--walk-depth", type=int, default=4, help="hops per walk (default: 4)")
    p.add_argument("--walks", type=int, default=100, help="walks per entity (default: 100)")
    p.add_argument("--no-relations", action="store_true",
                   help="emit entity-only walks (drop relation tokens)")


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="global random seed (default: 0)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads; only 1 is bit-reproducible (default: 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="kgrerank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--config", help="key = value file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate and redirect-resolve a graph")
    _graph_args(p, required=True)
    p.add_argument("--dedup", action="store_true", help="drop duplicate triples")
    p.add_argument("--assessed", help="file of assessed entity ids, one per line")
    p.add_argument("--emb", help="embedding file checked for coverage of assessed ids")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("walks", help="write a random-walk corpus")
    _graph_args(p, required=True)
    _walk_args(p)
    _common(p)
    p.add_argument("--out", required=True, help="corpus file, one walk per line")
    p.set_defaults(func=cmd_walks)

    p = sub.add_parser("train", help="train embeddings")
    p.add_argument("family", choices=["sgns", "joint", "complex"])
    _graph_args(p)
    _walk_args(p)
    _common(p)
    p.add_argument("--corpus", help="sgns: whitespace-tokenised corpus instead of --triples")
    p.add_argument("--docs", help="joint: doc_id<TAB>text file")
    p.add_argument("--links", help="joint: entity<TAB>linked_entity file")
    p.add_argument("--anchors", help="joint: doc_id<TAB>token_offset<TAB>entity file")
    p.add_argument("--no-link-graph", action="store_true", help="joint: drop the link stream")
    p.add_argument("--test", help="complex: held-out triples for link-prediction report")
    p.add_argument("--dim", type=int, default=100, help="embedding dimension (default: 100)")
    p.add_argument("--epochs", type=int, default=5, help="training epochs (default: 5)")
    p.add_argument("--window", type=int, default=5, help="context window (default: 5)")
    p.add_argument("--negatives", type=int, default=5, help="negative samples (default: 5)")
    p.add_argument("--min-count", type=int, default=0, help="minimum token count (default: 0)")
    p.add_argument("--sample", type=float, default=0.0,
                   help="subsampling threshold, 0 disables (default: 0)")
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate (default: 0.025 sgns/joint, 0.1 complex)")
    p.add_argument("--batch-size", type=int, default=None,
                   help="pairs/triples per update (default: 64 sgns/joint, 128 complex)")
    p.add_argument("--reg", type=float, default=0.0, help="complex: L2 weight (default: 0)")
    p.add_argument("--out", required=True,
                   help="embedding file (complex: prefix for .entities.txt/.relations.txt)")
    p.add_argument("--loss-log", help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rerank", help="re-rank a baseline run with embeddings")
    p.add_argument("--run", required=True, help="baseline TREC run")
    p.add_argument("--ann", required=True, help="query annotations JSON")
    p.add_argument("--emb", required=True, help="word2vec-format entity embeddings")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5,
                   help="interpolation weight of the embedding score (default: 0.5)")
    p.add_argument("--normalization", default="minmax", choices=["minmax", "none"],
                   help="baseline score normalisation (default: minmax)")
    p.add_argument("--missing", default="zero", choices=["zero", "skip"],
                   help="candidates without vectors: score 0 or drop (default: zero)")
    p.add_argument("--depth", type=int, help="re-rank only the top DEPTH entities")
    p.add_argument("--tag", help="run tag of the output")
    p.add_argument("--lambda-sweep", help="comma-separated lambdas to evaluate")
    p.add_argument("--qrels", help="qrels for --lambda-sweep")
    p.add_argument("--sweep-out", help="sweep CSV path (default: stdout)")
    p.add_argument("--out", help="output run (default: stdout)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="NDCG@k of a run, optionally compared to another")
    p.add_argument("--run", required=True, help="TREC run")
    p.add_argument("--qrels", required=True, help="qrels file")
    p.add_argument("--k", default="10,100", help="comma-separated cutoffs (default: 10,100)")
    p.add_argument("--gain", default="linear", choices=["linear", "exponential"],
                   help="gain function (default: linear)")
    p.add_argument("--compare", help="second run for a paired two-sided t-test")
    p.add_argument("--out", help="report CSV (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("coherence", help="per-query coherence of relevant entities")
    p.add_argument("--qrels", required=True, help="qrels file")
    p.add_argument("--emb", required=True, help="word2vec-format entity embeddings")
    p.add_argument("--tau", type=float, default=0.7, help="similarity threshold (default: 0.7)")
    p.add_argument("--min-rel", type=int, default=10,
                   help="minimum relevant entities with vectors (default: 10)")
    p.add_argument("--out", help="report CSV (default: stdout)")
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("lean", help="lean precision/recall of entity-linking output")
    p.add_argument("--system", required=True, help="system annotations JSON")
    p.add_argument("--gold", required=True, help="gold annotations JSON")
    p.add_argument("--out", help="report CSV (default: stdout)")
    p.set_defaults(func=cmd_lean)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in sub_action.choices.values():
        defaults = {}
        for action in sp._actions:
            if action.dest in values:
                v = values[action.dest]
                if isinstance(action, argparse._StoreTrueAction):
                    v = v.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    v = action.type(v)
                defaults[action.dest] = v
        for action in sp._actions:
            if action.dest in defaults and action.required:
                action.required = False
        sp.set_defaults(**defaults)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, FormatError, ValueError) as exc:
        print(f"kgrerank: config: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "train":
        complex_ = args.family == "complex"
        if args.lr is None:
            args.lr = 0.1 if complex_ else 0.025
        if args.batch_size is None:
            args.batch_size = 128 if complex_ else 64
    try:
        return args.func(args)
    except (FormatError, ValidationError, ValueError, KeyError) as exc:
        print(f"kgrerank {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"kgrerank {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
