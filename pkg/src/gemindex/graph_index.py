"""GEM dual graph: per-cluster proximity graphs built under quantized EMD,
woven together by bridge vertices, augmented with supervised shortcuts,
and maintained by insertion and lazy deletion."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .clustering import (
    DEFAULT_FALLBACK_R,
    DEFAULT_R_MAX,
    ClusterSpace,
    CutoffModel,
    TfIdfProfile,
    assign_top_clusters,
    cutoff_features,
    label_cutoff,
    profile_from_coarse,
    train_cutoff_model,
    two_stage_cluster,
)
from .core import Corpus, SimilarityKind, VectorSet, make_rng, normalize_corpus, normalize_set
from .errors import DimMismatch, DuplicateId, GemError, TooFewSamples, UnknownDocId
from .metric_space import Codebook, CodeSet, encode, qemd
from .search import SearchParams, cluster_filter, search
from .traversal import beam_traverse

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingPair:
    query: VectorSet
    positive_id: int


def default_k1(total_vectors: int) -> int:
    """Power of two nearest to 16*sqrt(#vectors), clamped to [16, #vectors]."""
    target = 16.0 * math.sqrt(max(total_vectors, 1))
    lo = 2 ** int(math.floor(math.log2(target)))
    k1 = lo if target - lo <= 2 * lo - target else 2 * lo
    return int(min(max(k1, 16), total_vectors))


def default_k2(n_sets: int) -> int:
    return int(min(max(2, n_sets // 1000), n_sets))


@dataclass
class BuildParams:
    k1: int | None = None
    k2: int | None = None
    f: int | None = None  # construction fan-out; None -> M
    M: int = 24
    ef_construction: int = 80
    r_max: int = DEFAULT_R_MAX
    shortcut_frac: float = 0.2
    seed: int = 0
    f_prime: int = 10
    s_max: int = 4
    fallback_r: int = DEFAULT_FALLBACK_R
    tfidf_prune: bool = True
    sample_frac: float = 1.0
    kmeans_iters: int = 25
    max_depth: int = 6
    min_leaf: int = 10
    t: int = 4
    neighbor_selection: str = "diverse"  # or "simple": plain f nearest

    def resolved(self, corpus: Corpus) -> "BuildParams":
        out = BuildParams(**asdict(self))
        if out.k1 is None:
            out.k1 = default_k1(int(round(corpus.total_vectors() * out.sample_frac)))
        if out.k2 is None:
            out.k2 = default_k2(corpus.size)
        out.k2 = min(out.k2, out.k1)
        if out.f is None:
            out.f = out.M
        out.validate()
        return out

    def validate(self) -> None:
        f = self.M if self.f is None else self.f
        if not 1 <= f <= self.M <= self.ef_construction:
            raise GemError(f"need 1 <= f <= M <= ef_construction, got {f}, {self.M}, {self.ef_construction}")
        if not 0.0 <= self.shortcut_frac <= 1.0:
            raise GemError("shortcut_frac must be in [0, 1]")
        if self.neighbor_selection not in ("diverse", "simple"):
            raise GemError(f"unknown neighbor_selection {self.neighbor_selection!r}")
        if self.r_max < 1 or self.fallback_r < 1:
            raise GemError("r_max and fallback_r must be >= 1")


@dataclass(eq=False)
class GemGraph:
    """Set-level adjacency; each set is one vertex however many clusters hold it."""

    degree_cap: int
    s_max: int = 4
    adjacency: list[list[int]] = field(default_factory=list)
    c_top: list[tuple[int, ...]] = field(default_factory=list)
    shortcuts: set[tuple[int, int]] = field(default_factory=set)
    tombstones: set[int] = field(default_factory=set)
    entry_candidates: dict[int, list[int]] = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.adjacency)

    @property
    def n_live(self) -> int:
        return self.n_vertices - len(self.tombstones)

    def add_vertex(self, c_top: Iterable[int]) -> int:
        vid = len(self.adjacency)
        self.adjacency.append([])
        self.c_top.append(tuple(sorted(c_top)))
        for c in self.c_top[vid]:
            bisect.insort(self.entry_candidates.setdefault(c, []), vid)
        return vid

    def neighbors(self, v: int) -> list[int]:
        return self.adjacency[v]

    @staticmethod
    def _key(u: int, v: int) -> tuple[int, int]:
        return (u, v) if u < v else (v, u)

    def is_shortcut(self, u: int, v: int) -> bool:
        return self._key(u, v) in self.shortcuts

    def regular_neighbors(self, v: int) -> list[int]:
        return [u for u in self.adjacency[v] if self._key(u, v) not in self.shortcuts]

    def shortcut_count(self, v: int) -> int:
        return len(self.adjacency[v]) - len(self.regular_neighbors(v))

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def has_edge(self, u: int, v: int) -> bool:
        adj = self.adjacency[u]
        i = bisect.bisect_left(adj, v)
        return i < len(adj) and adj[i] == v

    def add_edge(self, u: int, v: int, shortcut: bool = False) -> None:
        if u == v:
            return
        for a, b in ((u, v), (v, u)):
            if not self.has_edge(a, b):
                bisect.insort(self.adjacency[a], b)
        if shortcut:
            self.shortcuts.add(self._key(u, v))

    def remove_edge(self, u: int, v: int) -> None:
        for a, b in ((u, v), (v, u)):
            if self.has_edge(a, b):
                self.adjacency[a].remove(b)
        self.shortcuts.discard(self._key(u, v))

    def members(self, cluster: int) -> list[int]:
        return self.entry_candidates.get(cluster, [])

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def covered(self, v: int) -> set[int]:
        """Clusters of C_top(v) that have a representative among v's regular neighbors."""
        mine = set(self.c_top[v])
        out: set[int] = set()
        for u in self.regular_neighbors(v):
            out.update(mine.intersection(self.c_top[u]))
        return out

    def invariant_violations(self, degree_bound: int | None = None) -> list[str]:
        """Bidirectionality, degree caps and cluster coverage; empty when healthy."""
        bad = []
        cap = self.degree_cap if degree_bound is None else degree_bound
        for v, adj in enumerate(self.adjacency):
            if len(set(adj)) != len(adj) or v in adj:
                bad.append(f"vertex {v}: duplicate or self edge")
            for u in adj:
                if not 0 <= u < self.n_vertices:
                    bad.append(f"vertex {v}: dangling neighbor {u}")
                elif not self.has_edge(u, v):
                    bad.append(f"edge {v}->{u} not mirrored")
            reg = len(self.regular_neighbors(v))
            if reg > cap:
                bad.append(f"vertex {v}: regular degree {reg} > {cap}")
            if len(adj) - reg > self.s_max:
                bad.append(f"vertex {v}: {len(adj) - reg} shortcuts > {self.s_max}")
            cov = self.covered(v)
            for c in self.c_top[v]:
                if c not in cov and len(self.members(c)) > 1:
                    bad.append(f"vertex {v}: no neighbor in its cluster {c}")
        return bad


@dataclass(eq=False)
class GemIndex:
    """Everything a search needs: vectors, codebook, clusters, graph."""

    corpus: Corpus
    kind: SimilarityKind
    codebook: Codebook
    space: ClusterSpace
    codes: list[CodeSet]
    graph: GemGraph
    params: BuildParams
    model: CutoffModel | None = None
    naive_memberships: list[int] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.corpus.dim

    @property
    def size(self) -> int:
        return self.corpus.size


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


class _QemdCache:
    def __init__(self, codes: list[CodeSet], codebook: Codebook):
        self.codes = codes
        self.codebook = codebook
        self._memo: dict[tuple[int, int], float] = {}

    def __call__(self, u: int, v: int) -> float:
        key = (u, v) if u < v else (v, u)
        d = self._memo.get(key)
        if d is None:
            d = qemd(self.codes[key[0]], self.codes[key[1]], self.codebook)
            self._memo[key] = d
        return d


def _edge_protected(graph: GemGraph, x: int, y: int) -> bool:
    """True when dropping (x, y) would leave x or y without a neighbor in a
    cluster they share."""
    shared = set(graph.c_top[x]).intersection(graph.c_top[y])
    if not shared:
        return False
    for a, b in ((x, y), (y, x)):
        for c in shared:
            others = [u for u in graph.regular_neighbors(a) if u != b and c in graph.c_top[u]]
            if not others:
                return True
    return False


def _evict_least_similar(graph: GemGraph, x: int, dist: Callable[[int, int], float]) -> None:
    """Drop x's regular edge with the largest distance (ties: largest id),
    skipping edges that carry x's or the neighbor's only link into a shared
    cluster unless every edge does."""
    ranked = sorted(graph.regular_neighbors(x), key=lambda u: (dist(x, u), u), reverse=True)
    for u in ranked:
        if not _edge_protected(graph, x, u):
            graph.remove_edge(x, u)
            return
    graph.remove_edge(x, ranked[0])


def select_diverse(p: int, ranked: Sequence[int], limit: int, dist) -> list[int]:
    """Relative-neighborhood pruning over candidates sorted by distance to p:
    keep c only if it is closer to p than to every candidate already kept."""
    kept: list[int] = []
    for c in ranked:
        dpc = dist(p, c)
        if all(dpc < dist(c, s) for s in kept):
            kept.append(c)
            if len(kept) >= limit:
                break
    return kept


def _enforce_cap(graph: GemGraph, x: int, M: int, dist) -> None:
    while len(graph.regular_neighbors(x)) > M:
        _evict_least_similar(graph, x, dist)


def connect_new(graph: GemGraph, p: int, cand: Sequence[int], M: int, dist) -> None:
    for q in cand:
        graph.add_edge(p, q)
        _enforce_cap(graph, q, M, dist)
    _enforce_cap(graph, p, M, dist)


def update_bridges(p: int, new_neighbors: Sequence[int], graph: GemGraph, M: int,
                   dist: Callable[[int, int], float]) -> list[int]:
    """Merge old and new neighbor candidates of a bridge vertex; keep the M
    closest while guaranteeing one neighbor per cluster of C_top(p)."""
    old = graph.regular_neighbors(p)
    c_all = sorted(set(old).union(new_neighbors) - {p})
    if len(c_all) <= M:
        final = c_all
    else:
        ranked = sorted(c_all, key=lambda u: (dist(p, u), u))
        final = ranked[:M]
        pinned: list[int] = []
        # old neighbors for which p is their only link into a shared cluster
        for u in old:
            if _edge_protected(graph, p, u) and u not in pinned:
                pinned.append(u)
        for c in graph.c_top[p]:
            reps = [u for u in ranked if c in graph.c_top[u]]
            if reps and not any(u in pinned for u in reps):
                in_final = [u for u in final if c in graph.c_top[u]]
                pinned.append(in_final[0] if in_final else reps[0])
        pinned = sorted(pinned, key=lambda u: (dist(p, u), u))[:M]
        for u in pinned:
            if u in final:
                continue
            loose = [w for w in final if w not in pinned]
            farthest = max(loose, key=lambda w: (dist(p, w), w))
            final[final.index(farthest)] = u
        final = sorted(final)
    keep = set(final)
    for u in old:
        if u not in keep:
            graph.remove_edge(p, u)
    added = [u for u in final if not graph.has_edge(p, u) or graph.is_shortcut(p, u)]
    for u in added:
        graph.remove_edge(p, u)
        graph.add_edge(p, u)
    for u in added:
        _enforce_cap(graph, u, M, dist)
    return final


def _cluster_neighbors(graph: GemGraph, p: int, pool: set[int], entry: int, ef: int, f: int,
                       dist, diverse: bool = False) -> list[int]:
    """f nearest (by qEMD) live vertices of ``pool`` reachable from ``entry``,
    optionally thinned by relative-neighborhood pruning."""
    found = beam_traverse(
        [entry],
        score=lambda v: dist(p, v),
        neighbors=graph.neighbors,
        ef=ef,
        admit=lambda v: v in pool,
        returnable=lambda v: v != p and v not in graph.tombstones,
    )
    ranked = [c.id for c in found]
    if diverse:
        return select_diverse(p, ranked, f, dist)
    return ranked[:f]


def _link_in_cluster(graph: GemGraph, p: int, done: list[int], params: BuildParams, dist) -> None:
    """One step of the cluster graph build: find p's f nearest processed
    members, then connect (new vertex) or merge (bridge vertex)."""
    diverse = params.neighbor_selection == "diverse"
    cand = _cluster_neighbors(graph, p, set(done), done[0], params.ef_construction, params.f,
                              dist, diverse) if done else []
    if not graph.regular_neighbors(p):
        connect_new(graph, p, cand, params.M, dist)
    else:
        update_bridges(p, cand, graph, params.M, dist)


def build_cluster_graph(members: Sequence[int], graph: GemGraph, params: BuildParams, dist,
                        processed: list[int] | None = None) -> GemGraph:
    """Insert a cluster's members one by one, in the given (ascending id) order."""
    done = processed if processed is not None else []
    for p in members:
        _link_in_cluster(graph, p, done, params, dist)
        bisect.insort(done, p)
    return graph


def _profiles(codes: list[CodeSet], space: ClusterSpace) -> list[TfIdfProfile]:
    return [profile_from_coarse(space.coarse_of(cs.codes), space.doc_freq, space.n_sets)
            for cs in codes]


def fit_cutoff_model(pairs: Sequence[TrainingPair], profiles: list[TfIdfProfile],
                     codes: list[CodeSet], space: ClusterSpace, kind: SimilarityKind,
                     params: BuildParams) -> CutoffModel | None:
    """Train the per-set r predictor from training pairs; None if too few."""
    feats, labels = [], []
    for pair in pairs:
        q = normalize_set(pair.query, kind)
        qc = cluster_filter(q, space.index_centroids, kind, params.t)
        prof = profiles[pair.positive_id]
        feats.append(cutoff_features(prof, codes[pair.positive_id].m, params.r_max))
        labels.append(label_cutoff(prof, qc, params.r_max))
    try:
        return train_cutoff_model(feats, labels, params.max_depth, params.min_leaf, params.r_max)
    except TooFewSamples:
        log.info("only %d training pairs; using fixed r=%d", len(pairs), params.fallback_r)
        return None


def build_index(corpus: Corpus, params: BuildParams | None = None,
                pairs: Sequence[TrainingPair] = (), kind: SimilarityKind | str = "cosine") -> GemIndex:
    """Cluster and assign, build every cluster graph, inject shortcuts."""
    kind = SimilarityKind.parse(kind)
    params = (params or BuildParams()).resolved(corpus)
    corpus = normalize_corpus(corpus, kind)
    corpus = Corpus(list(corpus.sets), corpus.dim)
    for pair in pairs:
        if not 0 <= pair.positive_id < corpus.size:
            raise UnknownDocId(f"training pair references unknown doc {pair.positive_id}")
        if pair.query.dim != corpus.dim:
            raise DimMismatch("training query dimension differs from corpus")
    rng = make_rng(params.seed)

    codebook, space = two_stage_cluster(corpus, params.k1, params.k2, kind, params.sample_frac,
                                        rng, params.kmeans_iters)
    codes = [encode(s, codebook) for s in corpus]
    profiles = _profiles(codes, space)
    model = fit_cutoff_model(pairs, profiles, codes, space, kind, params) if params.tfidf_prune else None

    graph = GemGraph(params.M, params.s_max)
    for prof, cs in zip(profiles, codes):
        graph.add_vertex(assign_top_clusters(prof, cs.m, model, params.fallback_r, params.tfidf_prune))

    index = GemIndex(corpus, kind, codebook, space, codes, graph, params, model,
                     [len(p) for p in profiles])
    dist = _QemdCache(codes, codebook)
    for c in range(space.k2):
        members = graph.members(c)
        if members:
            build_cluster_graph(members, graph, params, dist)

    if pairs and params.shortcut_frac > 0:
        n_pick = int(round(params.shortcut_frac * len(pairs)))
        picked = np.sort(rng.choice(len(pairs), n_pick, replace=False)) if n_pick else []
        inject_shortcuts(index, [pairs[i] for i in picked])
    return index


def inject_shortcuts(index: GemIndex, pairs: Sequence[TrainingPair], f_prime: int | None = None,
                     M: int | None = None) -> int:
    """Link each pair's top search result to its positive when the positive
    was missed and both ends have spare degree. Returns edges added."""
    graph = index.graph
    f_prime = index.params.f_prime if f_prime is None else f_prime
    M = graph.degree_cap if M is None else M
    sp = SearchParams(k=f_prime, t=index.params.t, ef_search=max(f_prime, 64), rerank_k=f_prime)
    added = 0
    for pair in pairs:
        p = pair.positive_id
        if not 0 <= p < graph.n_vertices or p in graph.tombstones:
            raise UnknownDocId(f"unknown or deleted doc {p}")
        ids = search(pair.query, index, sp).ids
        if not ids or p in ids:
            continue
        top = ids[0]
        if graph.has_edge(top, p):
            continue
        if graph.degree(top) > M or graph.degree(p) > M:
            continue
        if graph.shortcut_count(top) >= graph.s_max or graph.shortcut_count(p) >= graph.s_max:
            continue
        graph.add_edge(top, p, shortcut=True)
        added += 1
    return added


# ---------------------------------------------------------------------------
# maintenance
# ---------------------------------------------------------------------------


def insert(index: GemIndex, vs: VectorSet | np.ndarray, set_id: int | None = None) -> int:
    """Add one set exactly as the build would have placed it; returns its id."""
    next_id = index.corpus.size
    if isinstance(vs, VectorSet):
        set_id = vs.id if set_id is None else set_id
        vectors = vs.vectors
    else:
        vectors = vs
    if set_id is None:
        set_id = next_id
    if set_id < next_id:
        raise DuplicateId(f"id {set_id} already present")
    if set_id != next_id:
        raise GemError(f"ids must stay dense; next id is {next_id}, got {set_id}")
    new = normalize_set(VectorSet(set_id, vectors), index.kind, index.dim)
    cs = encode(new, index.codebook)
    prof = profile_from_coarse(index.space.coarse_of(cs.codes), index.space.doc_freq,
                               index.space.n_sets)
    params = index.params
    c_top = assign_top_clusters(prof, cs.m, index.model, params.fallback_r, params.tfidf_prune)

    index.corpus.sets.append(new)
    index.codes.append(cs)
    index.naive_memberships.append(len(prof))
    graph = index.graph
    processed = {c: list(graph.members(c)) for c in c_top}
    vid = graph.add_vertex(c_top)
    dist = _QemdCache(index.codes, index.codebook)
    for c in graph.c_top[vid]:
        build_cluster_graph([vid], graph, params, dist, processed[c])
    return vid


def delete(index: GemIndex, set_id: int) -> None:
    """Tombstone a set: still traversed, never returned."""
    graph = index.graph
    if not 0 <= set_id < graph.n_vertices or set_id in graph.tombstones:
        raise UnknownDocId(f"id {set_id} is not a live set")
    graph.tombstones.add(set_id)
