"""Set-level clustering: two-stage k-means, TF-IDF profiles, top-r pruning
and the decision-tree model that predicts a per-set cutoff r."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Corpus, SimilarityKind, VectorSet
from .errors import EmptyProfile, EmptySet, GemError, TooFewPoints, TooFewSamples
from .metric_space import Codebook, build_codebook, nearest_centroid, pairwise_dist

DEFAULT_R_MAX = 10
DEFAULT_FALLBACK_R = 3


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    sq = (points * points).sum(1)[:, None] + (centroids * centroids).sum(1)[None, :] \
        - 2.0 * points @ centroids.T
    return np.maximum(sq, 0.0)


def kmeans_objective(points, centroids) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(_sq_dists(pts, np.asarray(centroids, dtype=np.float64)).min(axis=1).sum())


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # remaining points coincide with chosen centroids
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[idx:idx + 1]).ravel())
    return points[chosen].copy()


def kmeans(points, k: int, iters: int = 25, rng: np.random.Generator | None = None,
           history: list | None = None) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters are reseeded with the point currently farthest from its
    centroid. When ``history`` is a list, the objective after every
    assignment step is appended to it.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or n < k:
        raise TooFewPoints(f"k-means needs at least k={k} points, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    cents = _kmeanspp_init(pts, k, rng)
    for _ in range(max(iters, 1)):
        d = _sq_dists(pts, cents)
        assign = d.argmin(axis=1)
        if history is not None:
            history.append(float(d[np.arange(n), assign].sum()))
        counts = np.bincount(assign, minlength=k)
        new = np.zeros_like(cents)
        np.add.at(new, assign, pts)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            resid = d[np.arange(n), assign]
            for c in np.flatnonzero(~nonempty):
                far = int(np.argmax(resid))
                new[c] = pts[far]
                resid[far] = -1.0
        if np.array_equal(new, cents):
            break
        cents = new
    if history is not None:
        history.append(kmeans_objective(pts, cents))
    return cents


# ---------------------------------------------------------------------------
# two-stage clustering
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ClusterSpace:
    index_centroids: np.ndarray  # (k2, d) float32
    quant_to_index: np.ndarray  # (k1,) int64
    doc_freq: np.ndarray  # (k2,) int64
    n_sets: int
    kind: SimilarityKind

    @property
    def k2(self) -> int:
        return self.index_centroids.shape[0]

    def coarse_of(self, codes: np.ndarray) -> np.ndarray:
        return self.quant_to_index[codes]


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1)
    norms[norms == 0] = 1.0
    return a / norms[:, None]


def coarse_assignment(cents_quant: np.ndarray, cents_index: np.ndarray,
                      kind: SimilarityKind) -> np.ndarray:
    return pairwise_dist(cents_quant, cents_index, kind).argmin(axis=1).astype(np.int64)


def two_stage_cluster(corpus: Corpus, k1: int, k2: int, kind: SimilarityKind,
                      sample_frac: float = 1.0, rng: np.random.Generator | None = None,
                      iters: int = 25) -> tuple[Codebook, ClusterSpace]:
    """Fine vocabulary by k-means over (a sample of) all vectors, coarse
    clusters by k-means over the fine centroids."""
    if not 0.0 < sample_frac <= 1.0:
        raise GemError(f"sample_frac must be in (0, 1], got {sample_frac}")
    kind = SimilarityKind.parse(kind)
    if not 1 <= k2 <= k1:
        raise TooFewPoints(f"need 1 <= k2 <= k1, got k1={k1}, k2={k2}")
    rng = rng if rng is not None else np.random.default_rng(0)
    points = corpus.stacked().astype(np.float64)
    if sample_frac < 1.0:
        n_sample = max(int(round(sample_frac * len(points))), 1)
        points = points[np.sort(rng.choice(len(points), n_sample, replace=False))]
    if len(points) < k1:
        raise TooFewPoints(f"{len(points)} sampled vectors < k1={k1}")

    fine = kmeans(points, k1, iters, rng)
    if kind is SimilarityKind.COSINE:
        fine = _unit_rows(fine)
    codebook = build_codebook(fine, kind)

    coarse = kmeans(codebook.centroids, k2, iters, rng)
    if kind is SimilarityKind.COSINE:
        coarse = _unit_rows(coarse)
    coarse = coarse.astype(np.float32)
    quant_to_index = coarse_assignment(codebook.centroids, coarse, kind)

    doc_freq = np.zeros(k2, dtype=np.int64)
    for s in corpus:
        doc_freq[np.unique(quant_to_index[nearest_centroid(s.vectors, codebook)])] += 1
    space = ClusterSpace(coarse, quant_to_index, doc_freq, corpus.size, kind)
    return codebook, space


# ---------------------------------------------------------------------------
# TF-IDF profiles and pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TfIdfProfile:
    """(cluster, score) entries, score descending then cluster ascending."""

    entries: tuple[tuple[int, float], ...]

    @classmethod
    def from_scores(cls, scores: dict[int, float]) -> "TfIdfProfile":
        return cls(tuple(sorted(((int(c), float(s)) for c, s in scores.items()),
                                key=lambda e: (-e[1], e[0]))))

    @property
    def clusters(self) -> list[int]:
        return [c for c, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def idf(doc_freq: int, n_corpus: int) -> float:
    # clamped at zero: a cluster touched by every set gets ln(N/(N+1)) < 0
    return max(math.log(n_corpus / (1.0 + doc_freq)), 0.0)


def profile_from_coarse(coarse: np.ndarray, doc_freq: np.ndarray, n_corpus: int) -> TfIdfProfile:
    if len(coarse) == 0:
        raise EmptySet("cannot profile an empty set")
    clusters, tf = np.unique(coarse, return_counts=True)
    return TfIdfProfile.from_scores(
        {int(c): int(n) * idf(int(doc_freq[c]), n_corpus) for c, n in zip(clusters, tf)})


def tfidf_profile(vs: VectorSet | np.ndarray, codebook: Codebook, space: ClusterSpace,
                  n_corpus: int | None = None) -> TfIdfProfile:
    """Profile a set (or its fine codes) against the coarse cluster space."""
    if isinstance(vs, VectorSet):
        codes = nearest_centroid(vs.vectors, codebook)
    else:
        codes = np.asarray(vs, dtype=np.int64)
    n = space.n_sets if n_corpus is None else n_corpus
    return profile_from_coarse(space.coarse_of(codes), space.doc_freq, n)


def prune_clusters(profile: TfIdfProfile, r: int) -> list[int]:
    """The first min(r, |profile|) clusters of the sorted profile."""
    if len(profile) == 0:
        raise EmptyProfile("profile has no entries")
    if r < 1:
        raise GemError(f"r must be >= 1, got {r}")
    return profile.clusters[:r]


def label_cutoff(profile: TfIdfProfile, query_clusters, r_max: int = DEFAULT_R_MAX) -> int:
    """1-based rank of the first profile cluster the query touches, else r_max."""
    wanted = set(query_clusters)
    for rank, c in enumerate(profile.clusters[:r_max], start=1):
        if c in wanted:
            return rank
    return r_max


def cutoff_features(profile: TfIdfProfile, m: int, r_max: int = DEFAULT_R_MAX) -> np.ndarray:
    """Top-r_max scores, zero-padded, followed by the set size m."""
    feats = np.zeros(r_max + 1)
    top = profile.scores[:r_max]
    feats[:len(top)] = top
    feats[r_max] = m
    return feats


# ---------------------------------------------------------------------------
# cutoff model (CART, Gini)
# ---------------------------------------------------------------------------


@dataclass
class CutoffModel:
    """Binary tree stored as parallel arrays; leaves have feature == -1."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[int] = field(default_factory=list)
    r_max: int = DEFAULT_R_MAX

    def _add(self, feature=-1, threshold=0.0, value=1) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict_one(self, x) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return self.value[node]

    def predict(self, X) -> np.ndarray:
        return np.array([self.predict_one(x) for x in np.asarray(X, dtype=np.float64)])


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float((p * p).sum())


def _majority(y: np.ndarray) -> int:
    labels, counts = np.unique(y, return_counts=True)
    return int(labels[np.argmax(counts)])  # np.unique sorts, so ties pick the smaller label


def _best_split(X: np.ndarray, y_idx: np.ndarray, n_classes: int, min_leaf: int):
    n, n_feat = X.shape
    parent = _gini(np.bincount(y_idx, minlength=n_classes))
    best = (parent - 1e-12, None, None)
    for f in range(n_feat):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y_idx[order]
        left = np.zeros(n_classes)
        right = np.bincount(ys, minlength=n_classes).astype(float)
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            nl = i + 1
            if nl < min_leaf or n - nl < min_leaf or xs[i] == xs[i + 1]:
                continue
            imp = (nl * _gini(left) + (n - nl) * _gini(right)) / n
            if imp < best[0]:
                best = (imp, f, 0.5 * (xs[i] + xs[i + 1]))
    return best[1], best[2]


def train_cutoff_model(features, labels, max_depth: int = 6, min_leaf: int = 10,
                       r_max: int = DEFAULT_R_MAX) -> CutoffModel:
    """Greedy top-down tree minimizing weighted Gini impurity."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) < max(min_leaf, 1) or X.shape[0] != len(y):
        raise TooFewSamples(f"need at least {min_leaf} labelled samples, got {len(y)}")
    if y.min() < 1 or y.max() > r_max:
        raise GemError(f"labels must lie in [1, {r_max}]")
    classes = np.unique(y)
    y_idx = np.searchsorted(classes, y)
    model = CutoffModel(r_max=r_max)

    def grow(rows: np.ndarray, depth: int) -> int:
        node = model._add(value=_majority(y[rows]))
        if depth >= max_depth or len(np.unique(y_idx[rows])) == 1 or len(rows) < 2 * min_leaf:
            return node
        f, thr = _best_split(X[rows], y_idx[rows], len(classes), min_leaf)
        if f is None:
            return node
        go_left = X[rows, f] <= thr
        model.feature[node] = int(f)
        model.threshold[node] = float(thr)
        model.left[node] = grow(rows[go_left], depth + 1)
        model.right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return model


def predict_cutoff(model: CutoffModel, profile: TfIdfProfile, m: int) -> int:
    r = model.predict_one(cutoff_features(profile, m, model.r_max))
    return int(min(max(r, 1), max(min(model.r_max, len(profile)), 1)))


def assign_top_clusters(profile: TfIdfProfile, m: int, model: CutoffModel | None,
                        fallback_r: int = DEFAULT_FALLBACK_R, prune: bool = True) -> list[int]:
    """C_top for one set: model-predicted r, fixed r without a model, or all
    profiled clusters when pruning is disabled."""
    if not prune:
        return sorted(profile.clusters)
    r = predict_cutoff(model, profile, m) if model is not None else fallback_r
    return sorted(prune_clusters(profile, r))
