"""Query pipeline: centroid filtering, cluster-guided beam search under
quantized Chamfer, exact-Chamfer rerank."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .core import Corpus, SimilarityKind, VectorSet, normalize_set
from .errors import DimMismatch, EmptyGraph, EmptyQuery, GemError
from .metric_space import QueryScorer, chamfer_similarity, encode, pairwise_sim
from .traversal import Candidate, TraversalStats, beam_traverse

if TYPE_CHECKING:
    from .graph_index import GemGraph, GemIndex

DEFAULT_T = 4
DEFAULT_EF_SEARCH = 64


@dataclass
class SearchParams:
    k: int = 10
    t: int = DEFAULT_T
    ef_search: int = DEFAULT_EF_SEARCH
    rerank_k: int | None = None  # None -> 4 * k, capped at ef_search
    deterministic: bool = True
    max_threads: int = 1
    seed: int = 0
    use_cluster_filter: bool = True

    def __post_init__(self):
        if self.rerank_k is None:
            self.rerank_k = min(4 * self.k, max(self.ef_search, self.k))
        if self.k < 1 or self.t < 1:
            raise GemError("k and t must be >= 1")
        if not self.k <= self.rerank_k <= self.ef_search:
            raise GemError(
                f"need k <= rerank_k <= ef_search, got {self.k}, {self.rerank_k}, {self.ef_search}")
        if self.max_threads < 1:
            raise GemError("max_threads must be >= 1")


@dataclass
class SearchStats:
    qch_evals: int = 0
    exact_evals: int = 0
    hops: int = 0
    pruned: int = 0
    entries: int = 0
    discovered_at: dict[int, int] | None = None


@dataclass
class SearchResult:
    hits: list[tuple[int, float]]
    stats: SearchStats = field(default_factory=SearchStats)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.hits]


def cluster_filter(query: VectorSet, centroids: np.ndarray, kind: SimilarityKind, t: int) -> list[int]:
    """Union over query tokens of each token's top-t coarse centroids."""
    if query.m == 0:
        raise EmptyQuery("query has no vectors")
    if query.dim != centroids.shape[1]:
        raise DimMismatch(f"query dim {query.dim} vs centroid dim {centroids.shape[1]}")
    scores = pairwise_sim(query.vectors, centroids, kind)  # (m_q, k2)
    t = min(t, centroids.shape[0])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :t]
    return sorted(set(order.ravel().tolist()))


def select_entries(graph: "GemGraph", clusters: Iterable[int], deterministic: bool = True,
                   rng: np.random.Generator | None = None) -> list[int]:
    """One entry vertex per cluster: lowest live member, or a seeded random member."""
    entries = []
    for c in clusters:
        members = graph.entry_candidates.get(c, [])
        if not members:
            continue
        live = [v for v in members if v not in graph.tombstones] or members
        if deterministic or rng is None:
            entries.append(live[0])
        else:
            entries.append(live[int(rng.integers(len(live)))])
    return list(dict.fromkeys(entries))


def beam_search(scorer, graph: "GemGraph", entries: Sequence[int], c_query: Iterable[int] | None,
                params: SearchParams, stats: SearchStats | None = None) -> list[Candidate]:
    """Cluster-guided traversal; returns the qCH result heap sorted ascending."""
    if graph.n_vertices == 0:
        raise EmptyGraph("graph has no vertices")
    stats = stats if stats is not None else SearchStats()
    wanted = None if c_query is None else set(c_query)
    c_top = graph.c_top
    tomb = graph.tombstones

    def admit(v: int) -> bool:
        return wanted is None or not wanted.isdisjoint(c_top[v])

    tstats = TraversalStats(discovered_at=stats.discovered_at)
    found = beam_traverse(
        entries,
        score=scorer,
        neighbors=graph.neighbors,
        ef=params.ef_search,
        admit=admit,
        returnable=lambda v: v not in tomb,
        max_threads=params.max_threads,
        stats=tstats,
    )
    stats.qch_evals += tstats.distance_evals
    stats.hops += tstats.hops
    stats.pruned += tstats.pruned
    stats.entries += len(set(entries))
    return found


def rerank(query: VectorSet, candidates: Sequence[Candidate], corpus: Corpus, kind: SimilarityKind,
           rerank_k: int, k: int, stats: SearchStats | None = None) -> list[tuple[int, float]]:
    """Exact Chamfer similarity over the rerank_k qCH-best candidates."""
    pool = sorted(candidates)[:rerank_k]
    scored = [(c.id, chamfer_similarity(query, corpus[c.id], kind)) for c in pool]
    if stats is not None:
        stats.exact_evals += len(scored)
    scored.sort(key=lambda h: (-h[1], h[0]))
    return scored[:k]


def prepare_query(query: VectorSet | np.ndarray, index: "GemIndex") -> VectorSet:
    if not isinstance(query, VectorSet):
        query = VectorSet(0, query)
    if query.dim != index.dim:
        raise DimMismatch(f"query dim {query.dim} vs index dim {index.dim}")
    return normalize_set(query, index.kind)


def search(query: VectorSet | np.ndarray, index: "GemIndex", params: SearchParams | None = None,
           trace: bool = False) -> SearchResult:
    """Filter clusters, traverse from one entry per cluster, rerank exactly."""
    params = params or SearchParams()
    query = prepare_query(query, index)
    graph = index.graph
    if graph.n_vertices == 0 or graph.n_live == 0:
        raise EmptyGraph("index holds no live vectors sets")
    stats = SearchStats(discovered_at={} if trace else None)
    if params.use_cluster_filter:
        c_query = cluster_filter(query, index.space.index_centroids, index.kind, params.t)
    else:
        c_query = list(range(index.space.k2))
    rng = None if params.deterministic else np.random.default_rng(params.seed)
    entries = select_entries(graph, c_query, params.deterministic, rng)
    scorer = QueryScorer(encode(query, index.codebook), index.codebook)
    codes = index.codes
    found = beam_search(lambda v: scorer(codes[v]), graph, entries,
                        c_query if params.use_cluster_filter else None, params, stats)
    hits = rerank(query, found, index.corpus, index.kind, params.rerank_k, params.k, stats)
    return SearchResult(hits, stats)
