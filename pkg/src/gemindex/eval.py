"""Ground truth, retrieval metrics, the flat multi-vector-graph baseline,
and a benchmark runner."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Corpus, SimilarityKind, VectorSet, make_rng, normalize_corpus, normalize_set
from .errors import DimMismatch, EmptyGraph, EmptyGroundTruth, GemError, InconsistentQrels
from .graph_index import BuildParams, GemGraph, GemIndex, build_cluster_graph
from .clustering import two_stage_cluster
from .metric_space import Codebook, CodeSet, QueryScorer, chamfer_similarity, encode, qch
from .search import SearchParams, SearchResult, SearchStats, beam_search, rerank, search

Qrels = dict[int, set[int]]


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def brute_force_topk(query: VectorSet, corpus: Corpus, k: int, kind: SimilarityKind | str = "cosine",
                     exclude: Iterable[int] = ()) -> list[tuple[int, float]]:
    """Exact Chamfer similarity against every set; descending, ties by id."""
    kind = SimilarityKind.parse(kind)
    if query.dim != corpus.dim:
        raise DimMismatch(f"query dim {query.dim} vs corpus dim {corpus.dim}")
    query = normalize_set(query, kind)
    skip = set(exclude)
    scored = [(s.id, chamfer_similarity(query, s, kind)) for s in corpus if s.id not in skip]
    scored.sort(key=lambda h: (-h[1], h[0]))
    return scored[:k]


def oracle_qrels(queries: Sequence[VectorSet], corpus: Corpus, kind="cosine", depth: int = 1) -> Qrels:
    """Relevant set per query = its exact top-``depth`` documents."""
    return {q.id: {i for i, _ in brute_force_topk(q, corpus, depth, kind)} for q in queries}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _check(results: Sequence[int], g_q: set[int]) -> None:
    if not g_q:
        raise EmptyGroundTruth("ground-truth set is empty")
    if len(set(results)) != len(results):
        raise GemError("result list contains duplicates")


def recall_at_k(results: Sequence[int], g_q: set[int], k: int | None = None) -> float:
    _check(results, g_q)
    top = results if k is None else results[:k]
    return len(g_q.intersection(top)) / len(g_q)


def mrr_at_k(results: Sequence[int], g_q: set[int], k: int | None = None) -> float:
    _check(results, g_q)
    top = results if k is None else results[:k]
    for rank, doc in enumerate(top, start=1):
        if doc in g_q:
            return 1.0 / rank
    return 0.0


def success_at_k(results: Sequence[int], g_q: set[int], k: int | None = None) -> float:
    _check(results, g_q)
    top = results if k is None else results[:k]
    return 1.0 if g_q.intersection(top) else 0.0


@dataclass
class MetricReport:
    k: int
    recall_at_k: float
    mrr_at_k: float
    success_at_k: float
    mean_latency: float
    per_query: list[dict] = field(default_factory=list)
    mean_exact_evals: float = 0.0
    mean_qch_evals: float = 0.0

    def lines(self) -> list[str]:
        return [f"R@{self.k}\t{self.recall_at_k:.4f}",
                f"MRR@{self.k}\t{self.mrr_at_k:.4f}",
                f"S@{self.k}\t{self.success_at_k:.4f}",
                f"latency_ms\t{1000 * self.mean_latency:.3f}"]

    def record(self) -> dict:
        return {"k": self.k, "recall": self.recall_at_k, "mrr": self.mrr_at_k,
                "success": self.success_at_k, "mean_latency_s": self.mean_latency,
                "mean_exact_evals": self.mean_exact_evals, "mean_qch_evals": self.mean_qch_evals,
                "n_queries": len(self.per_query)}


def score_results(results: Mapping[int, Sequence[int]], qrels: Qrels, k: int) -> MetricReport:
    rows = []
    for qid, ids in results.items():
        g = qrels[qid]
        rows.append({"query_id": qid, "recall": recall_at_k(ids, g, k),
                     "mrr": mrr_at_k(ids, g, k), "success": success_at_k(ids, g, k)})
    mean = lambda key: float(np.mean([r[key] for r in rows])) if rows else 0.0
    return MetricReport(k, mean("recall"), mean("mrr"), mean("success"), 0.0, rows)


# ---------------------------------------------------------------------------
# MVG baseline: one flat graph built and searched with qCH
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MvgIndex:
    corpus: Corpus
    kind: SimilarityKind
    codebook: Codebook
    codes: list[CodeSet]
    graph: GemGraph
    params: BuildParams

    @property
    def dim(self) -> int:
        return self.corpus.dim


class _QchCache:
    def __init__(self, codes: list[CodeSet], codebook: Codebook):
        self.codes = codes
        self.codebook = codebook
        self._memo: dict[tuple[int, int], float] = {}

    def __call__(self, u: int, v: int) -> float:
        d = self._memo.get((u, v))
        if d is None:
            d = qch(self.codes[u], self.codes[v], self.codebook)
            self._memo[(u, v)] = d
        return d


def mvg_build(corpus: Corpus, params: BuildParams | None = None,
              kind: SimilarityKind | str = "cosine") -> MvgIndex:
    """Insert sets in id order into a single graph using qCH throughout."""
    kind = SimilarityKind.parse(kind)
    params = (params or BuildParams()).resolved(corpus)
    corpus = normalize_corpus(corpus, kind)
    corpus = Corpus(list(corpus.sets), corpus.dim)
    codebook, _ = two_stage_cluster(corpus, params.k1, params.k2, kind, params.sample_frac,
                                    make_rng(params.seed), params.kmeans_iters)
    codes = [encode(s, codebook) for s in corpus]
    graph = GemGraph(params.M, params.s_max)
    for _ in corpus:
        graph.add_vertex((0,))
    build_cluster_graph(list(range(corpus.size)), graph, params, _QchCache(codes, codebook))
    return MvgIndex(corpus, kind, codebook, codes, graph, params)


def mvg_search(query: VectorSet | np.ndarray, index: MvgIndex,
               params: SearchParams | None = None) -> SearchResult:
    """Single-entry greedy beam search under qCH, then exact rerank."""
    params = params or SearchParams()
    if not isinstance(query, VectorSet):
        query = VectorSet(0, query)
    if query.dim != index.dim:
        raise DimMismatch(f"query dim {query.dim} vs index dim {index.dim}")
    query = normalize_set(query, index.kind)
    graph = index.graph
    live = [v for v in range(graph.n_vertices) if v not in graph.tombstones]
    if not live:
        raise EmptyGraph("index holds no live sets")
    stats = SearchStats()
    scorer = QueryScorer(encode(query, index.codebook), index.codebook)
    codes = index.codes
    found = beam_search(lambda v: scorer(codes[v]), graph, [live[0]], None, params, stats)
    hits = rerank(query, found, index.corpus, index.kind, params.rerank_k, params.k, stats)
    return SearchResult(hits, stats)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def check_qrels(queries: Sequence[VectorSet], qrels: Qrels, n_docs: int) -> None:
    qids = {q.id for q in queries}
    if set(qrels) != qids:
        raise InconsistentQrels("qrels query ids do not match the query set")
    for qid, docs in qrels.items():
        if not docs:
            raise InconsistentQrels(f"query {qid} has no relevant documents")
        if any(not 0 <= d < n_docs for d in docs):
            raise InconsistentQrels(f"query {qid} references unknown documents")


def run_benchmark(kind: str, index, queries: Sequence[VectorSet], qrels: Qrels,
                  params: SearchParams | None = None, repeats: int = 1) -> MetricReport:
    """Score every query, average the metrics, and time the search call.

    ``index`` is a GemIndex for ``gem``, an MvgIndex for ``mvg`` and a
    Corpus (or any index exposing ``.corpus``) for ``brute``.
    """
    params = params or SearchParams()
    if kind not in ("gem", "mvg", "brute"):
        raise GemError(f"unknown index kind {kind!r}")
    corpus = index if isinstance(index, Corpus) else index.corpus
    check_qrels(queries, qrels, corpus.size)
    sim_kind = getattr(index, "kind", SimilarityKind.COSINE)
    tombs = () if isinstance(index, Corpus) else index.graph.tombstones

    def run(q: VectorSet) -> SearchResult:
        if kind == "gem":
            return search(q, index, params)
        if kind == "mvg":
            return mvg_search(q, index, params)
        hits = brute_force_topk(q, corpus, params.k, sim_kind, tombs)
        return SearchResult(hits, SearchStats(exact_evals=corpus.size - len(tombs)))

    results, latencies, exact, qchs = {}, [], [], []
    for rep in range(max(repeats, 1)):
        for q in queries:
            start = time.perf_counter()
            res = run(q)
            latencies.append(time.perf_counter() - start)
            if rep == 0:
                results[q.id] = res.ids
                exact.append(res.stats.exact_evals)
                qchs.append(res.stats.qch_evals)
    report = score_results(results, qrels, params.k)
    report.mean_latency = float(np.mean(latencies)) if latencies else 0.0
    report.mean_exact_evals = float(np.mean(exact)) if exact else 0.0
    report.mean_qch_evals = float(np.mean(qchs)) if qchs else 0.0
    return report
