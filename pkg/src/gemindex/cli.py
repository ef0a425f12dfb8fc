"""Command-line interface: generate, build, query, eval, bench, insert, delete, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

import numpy as np

from .core import Corpus
from .errors import GemError
from .eval import brute_force_topk, mvg_build, oracle_qrels, run_benchmark
from .graph_index import BuildParams, build_index, delete, insert
from .io import (load_index, load_pairs, load_qrels, load_vector_sets, read_vector_sets,
                 save_index, save_qrels, save_vector_sets, write_id_pairs, write_vector_sets)
from .search import DEFAULT_EF_SEARCH, DEFAULT_T, SearchParams, search

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_build_flags(p: argparse.ArgumentParser) -> None:
    d = BuildParams()
    p.add_argument("--k1", type=int, default=None, help="fine centroids (default: power-of-two heuristic)")
    p.add_argument("--k2", type=int, default=None, help="coarse clusters (default: max(2, N/1000))")
    p.add_argument("--m", dest="M", type=int, default=d.M, help="degree cap M")
    p.add_argument("--ef-construction", type=int, default=d.ef_construction)
    p.add_argument("--f", type=int, default=None, help="construction fan-out (default: M)")
    p.add_argument("--shortcut-frac", type=float, default=d.shortcut_frac)
    p.add_argument("--pairs", default=None, help="training pairs TSV (query_id, doc_id)")
    p.add_argument("--train-queries", default=None, help="vector-set file holding the pair queries")
    p.add_argument("--rmax", type=int, default=d.r_max)
    p.add_argument("--fallback-r", type=int, default=d.fallback_r)
    p.add_argument("--f-prime", type=int, default=d.f_prime)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")
    p.add_argument("--no-tfidf", action="store_true", help="assign sets to every touched cluster")
    p.add_argument("--neighbor-selection", choices=["diverse", "simple"], default=d.neighbor_selection)


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--t", type=int, default=DEFAULT_T)
    p.add_argument("--ef-search", type=int, default=DEFAULT_EF_SEARCH)
    p.add_argument("--rerank-k", type=int, default=None, help="default: 4*k")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--query-seed", type=int, default=0)


def _build_params(a) -> BuildParams:
    return BuildParams(k1=a.k1, k2=a.k2, f=a.f, M=a.M, ef_construction=a.ef_construction,
                       r_max=a.rmax, shortcut_frac=a.shortcut_frac, seed=a.seed,
                       f_prime=a.f_prime, fallback_r=a.fallback_r, tfidf_prune=not a.no_tfidf,
                       neighbor_selection=a.neighbor_selection)


def _search_params(a) -> SearchParams:
    ef = max(a.ef_search, a.k)
    rerank = a.rerank_k if a.rerank_k is not None else min(4 * a.k, ef)
    return SearchParams(k=a.k, t=a.t, ef_search=max(ef, rerank), rerank_k=rerank,
                        deterministic=a.deterministic, max_threads=a.threads, seed=a.query_seed)


def _pairs(a, corpus: Corpus):
    if a.pairs is None:
        return []
    if a.train_queries is None:
        raise GemError("--pairs needs --train-queries")
    return load_pairs(a.pairs, read_vector_sets(a.train_queries), corpus.size)


def cmd_generate(a) -> int:
    from .synthetic import topic_corpus

    data = topic_corpus(n_sets=a.n, n_topics=a.topics, d=a.dim, stopword_frac=a.stopword_frac,
                        second_topic_prob=a.second_topic_prob,
                        n_queries=a.queries + a.train, seed=a.seed)
    save_vector_sets(data.corpus, a.out_corpus)
    test = data.queries[:a.queries]
    write_vector_sets(test, a.out_queries)
    qrels = {q.id: data.qrels[q.id] for q in test}
    if a.oracle_qrels:
        qrels = oracle_qrels(test, data.corpus, a.metric)
    save_qrels(qrels, a.out_qrels)
    if a.out_pairs:
        train = data.queries[a.queries:]
        write_vector_sets(train, a.out_train_queries)
        write_id_pairs(((q.id, next(iter(data.qrels[q.id]))) for q in train), a.out_pairs)
    print(f"wrote {data.corpus.size} sets, {len(test)} queries")
    return EXIT_OK


def cmd_build(a) -> int:
    corpus = load_vector_sets(a.corpus)
    index = build_index(corpus, _build_params(a), _pairs(a, corpus), a.metric)
    save_index(index, a.out)
    g = index.graph
    print(f"built {index.size} sets, {g.n_edges} edges, {len(g.shortcuts)} shortcuts -> {a.out}")
    return EXIT_OK


def cmd_query(a) -> int:
    index = load_index(a.index)
    params = _search_params(a)
    queries = read_vector_sets(a.query)
    if a.format == "tsv":
        print("query_id\trank\tdoc_id\tscore")
    for q in queries:
        res = search(q, index, params)
        for rank, (doc, score) in enumerate(res.hits, start=1):
            if a.format == "tsv":
                print(f"{q.id}\t{rank}\t{doc}\t{score:.6f}")
            else:
                print(json.dumps({"query_id": q.id, "rank": rank, "doc_id": doc, "score": score}))
    return EXIT_OK


def _print_report(report, fmt: str, label: str | None = None) -> None:
    if fmt == "tsv":
        print("metric\tvalue" if label is None else "index\tmetric\tvalue")
        for line in report.lines():
            print(line if label is None else f"{label}\t{line}")
    else:
        rec = report.record()
        if label is not None:
            rec["index"] = label
        print(json.dumps(rec, sort_keys=True))


def cmd_eval(a) -> int:
    index = load_index(a.index)
    queries = read_vector_sets(a.queries)
    qrels = load_qrels(a.qrels, {q.id for q in queries}, index.size)
    report = run_benchmark("gem", index, queries, qrels, _search_params(a), repeats=1)
    _print_report(report, a.format)
    return EXIT_OK


def cmd_bench(a) -> int:
    queries = read_vector_sets(a.queries)
    if a.index_file:
        target = load_index(a.index_file)
        corpus = target.corpus
    else:
        corpus = load_vector_sets(a.corpus) if a.corpus else None
        if corpus is None:
            raise GemError("bench needs --corpus or --index-file")
        if a.index == "gem":
            target = build_index(corpus, _build_params(a), _pairs(a, corpus), a.metric)
        elif a.index == "mvg":
            target = mvg_build(corpus, _build_params(a), a.metric)
        else:
            target = corpus
    if a.index == "mvg" and a.index_file:
        target = mvg_build(corpus, target.params, target.kind)
    if a.index == "brute" and a.index_file is None:
        from .core import normalize_corpus
        target = normalize_corpus(corpus, a.metric)
    qrels = load_qrels(a.qrels, {q.id for q in queries}, corpus.size)
    report = run_benchmark(a.index, target, queries, qrels, _search_params(a), a.repeats)
    if a.format == "tsv":
        print("index\tR@k\tMRR@k\tS@k\tlatency_ms\texact_evals\tqch_evals")
        print(f"{a.index}\t{report.recall_at_k:.4f}\t{report.mrr_at_k:.4f}\t{report.success_at_k:.4f}"
              f"\t{1000 * report.mean_latency:.3f}\t{report.mean_exact_evals:.1f}\t{report.mean_qch_evals:.1f}")
    else:
        _print_report(report, a.format, a.index)
    return EXIT_OK


def cmd_insert(a) -> int:
    index = load_index(a.index)
    ids = [insert(index, s.vectors) for s in read_vector_sets(a.sets)]
    save_index(index, a.out or a.index)
    print("inserted\t" + ",".join(map(str, ids)))
    return EXIT_OK


def cmd_delete(a) -> int:
    index = load_index(a.index)
    for sid in a.ids:
        delete(index, sid)
    save_index(index, a.out or a.index)
    print("deleted\t" + ",".join(map(str, a.ids)))
    return EXIT_OK


def cmd_inspect(a) -> int:
    index = load_index(a.index)
    g = index.graph
    live = [v for v in range(g.n_vertices) if v not in g.tombstones]
    rows = [
        ("k1", index.codebook.k1),
        ("k2", index.space.k2),
        ("N", index.size),
        ("live", len(live)),
        ("edges", g.n_edges),
        ("shortcuts", len(g.shortcuts)),
        ("mean_c_top", float(np.mean([len(c) for c in g.c_top])) if g.c_top else 0.0),
        ("mean_naive_memberships", float(np.mean(index.naive_memberships)) if index.naive_memberships else 0.0),
        ("mean_degree", float(np.mean([len(x) for x in g.adjacency])) if g.adjacency else 0.0),
        ("cutoff_model", "trained" if index.model is not None else f"fixed r={index.params.fallback_r}"),
    ]
    print("stat\tvalue")
    for key, value in rows:
        print(f"{key}\t{value:.4f}" if isinstance(value, float) else f"{key}\t{value}")
    return EXIT_OK


def _ids(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad id list {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gemindex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic topic corpus, queries and qrels")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-queries", required=True)
    p.add_argument("--out-qrels", required=True)
    p.add_argument("--out-pairs", default=None)
    p.add_argument("--out-train-queries", default=None)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--train", type=int, default=0)
    p.add_argument("--stopword-frac", type=float, default=0.0)
    p.add_argument("--second-topic-prob", type=float, default=0.3)
    p.add_argument("--oracle-qrels", action="store_true", help="qrels = exact top-1 instead of planted source")
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build", help="build an index from a vector-set file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_build_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="search an index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    _add_search_flags(p)
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="R@k, MRR@k, S@k against qrels")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    _add_search_flags(p)
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="compare gem, mvg and brute force")
    p.add_argument("--index", choices=["gem", "mvg", "brute"], required=True)
    p.add_argument("--index-file", default=None, help="prebuilt GEM index (vectors and params reused)")
    p.add_argument("--corpus", default=None)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--repeats", type=int, default=10)
    _add_build_flags(p)
    _add_search_flags(p)
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("insert", help="add vector sets to an index")
    p.add_argument("--index", required=True)
    p.add_argument("--sets", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("delete", help="tombstone sets in an index")
    p.add_argument("--index", required=True)
    p.add_argument("--ids", type=_ids, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("inspect", help="print index statistics")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.func is cmd_generate and args.out_pairs and not (args.train > 0 and args.out_train_queries):
        parser.error("--out-pairs needs --train > 0 and --out-train-queries")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GemError, OSError, ValueError) as exc:
        print(f"gemindex: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
