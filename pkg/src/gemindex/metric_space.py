"""Set-to-set measures: exact Chamfer and EMD, plus their codebook-quantized forms.

EMD is solved exactly as an integer transportation problem: the uniform
masses 1/m1 and 1/m2 are scaled by lcm(m1, m2) and routed with successive
shortest augmenting paths (Dijkstra over reduced costs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import SimilarityKind, VectorSet, check_dims
from .errors import CodeOutOfRange, DimMismatch, SolverFailure, ZeroVector


_BLOCK = 1 << 22  # floats per difference block in the l2 kernel


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # renormalize in float64 so stored float32 rounding cannot leak into d(x, x)
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return np.clip(a @ b.T, -1.0, 1.0)


def _euclid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit differences: the expanded |a|^2 + |b|^2 - 2ab form cancels badly near 0
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _BLOCK // max(b.shape[0] * a.shape[1], 1))
    for i in range(0, a.shape[0], step):
        diff = a[i:i + step, None, :] - b[None, :, :]
        out[i:i + step] = np.sqrt((diff * diff).sum(axis=2))
    return out


def pairwise_dist(a: np.ndarray, b: np.ndarray, kind: SimilarityKind) -> np.ndarray:
    """Ground distance d_X between every row of ``a`` and every row of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dim {a.shape[1]} vs {b.shape[1]}")
    if SimilarityKind.parse(kind) is SimilarityKind.COSINE:
        return 1.0 - _cosine(a, b)
    return _euclid(a, b)


def pairwise_sim(a: np.ndarray, b: np.ndarray, kind: SimilarityKind) -> np.ndarray:
    """Token similarity: cosine (unit vectors) or negative Euclidean distance (l2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dim {a.shape[1]} vs {b.shape[1]}")
    if SimilarityKind.parse(kind) is SimilarityKind.COSINE:
        return _cosine(a, b)
    return -_euclid(a, b)


def chamfer_similarity(a: VectorSet, b: VectorSet, kind: SimilarityKind) -> float:
    """Sum over a's vectors of the best similarity to any vector of b."""
    check_dims(a, b)
    return float(pairwise_sim(a.vectors, b.vectors, kind).max(axis=1).sum())


def chamfer_distance(a: VectorSet, b: VectorSet, kind: SimilarityKind) -> float:
    """Mean over a's vectors of the smallest ground distance into b."""
    check_dims(a, b)
    return float(pairwise_dist(a.vectors, b.vectors, kind).min(axis=1).mean())


# ---------------------------------------------------------------------------
# exact transport
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _transport_flow(supply, demand, cost):
    """Min-cost integer flow from ``supply`` rows to ``demand`` columns.

    Returns the (n1, n2) flow matrix, or a matrix filled with -1 when the
    augmenting loop fails to route the full supply.
    """
    n1 = supply.shape[0]
    n2 = demand.shape[0]
    nv = n1 + n2 + 2
    s = n1 + n2
    t = s + 1
    total = 0
    for i in range(n1):
        total += supply[i]
    big = total + 1

    cap = np.zeros((nv, nv), dtype=np.int64)
    w = np.zeros((nv, nv), dtype=np.float64)
    for i in range(n1):
        cap[s, i] = supply[i]
        for j in range(n2):
            cap[i, n1 + j] = big
            w[i, n1 + j] = cost[i, j]
            w[n1 + j, i] = -cost[i, j]
    for j in range(n2):
        cap[n1 + j, t] = demand[j]

    pot = np.zeros(nv, dtype=np.float64)
    dist = np.empty(nv, dtype=np.float64)
    parent = np.empty(nv, dtype=np.int64)
    done = np.empty(nv, dtype=np.bool_)
    sent = 0
    rounds = 0
    while sent < total:
        rounds += 1
        if rounds > 4 * (total + nv) + 16:
            break
        for v in range(nv):
            dist[v] = np.inf
            parent[v] = -1
            done[v] = False
        dist[s] = 0.0
        for _ in range(nv):
            u = -1
            best = np.inf
            for v in range(nv):
                if not done[v] and dist[v] < best:
                    best = dist[v]
                    u = v
            if u == -1:
                break
            done[u] = True
            for v in range(nv):
                if cap[u, v] > 0 and not done[v]:
                    rc = w[u, v] + pot[u] - pot[v]
                    if rc < 0.0:
                        rc = 0.0
                    nd = dist[u] + rc
                    if nd < dist[v]:
                        dist[v] = nd
                        parent[v] = u
        if parent[t] == -1:
            break
        for v in range(nv):
            if dist[v] < np.inf:
                pot[v] += dist[v]
        push = total - sent
        v = t
        while v != s:
            u = parent[v]
            if cap[u, v] < push:
                push = cap[u, v]
            v = u
        v = t
        while v != s:
            u = parent[v]
            cap[u, v] -= push
            cap[v, u] += push
            v = u
        sent += push

    flow = np.zeros((n1, n2), dtype=np.int64)
    if sent < total:
        flow[:, :] = -1
        return flow
    for i in range(n1):
        for j in range(n2):
            flow[i, j] = cap[n1 + j, i]
    return flow


def transport_cost(weights_a: np.ndarray, weights_b: np.ndarray, cost: np.ndarray,
                   scale: int) -> tuple[float, np.ndarray]:
    """Exact optimal transport between integer-mass histograms.

    ``weights_a``/``weights_b`` are integer masses that each sum to ``scale``;
    the returned flow matrix is in units of 1/scale.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    flow = _transport_flow(np.ascontiguousarray(weights_a, dtype=np.int64),
                           np.ascontiguousarray(weights_b, dtype=np.int64), cost)
    if flow.size and flow[0, 0] < 0:
        raise SolverFailure("min-cost flow did not route the full mass")
    value = float((flow * cost).sum()) / scale
    return value, flow


@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal plan: ``flows[(i, j)] = t_ij`` for positive entries."""

    flows: dict
    cost: float

    def dense(self, m1: int, m2: int) -> np.ndarray:
        out = np.zeros((m1, m2))
        for (i, j), v in self.flows.items():
            out[i, j] = v
        return out


def emd(a: VectorSet, b: VectorSet, kind: SimilarityKind) -> TransportPlan:
    """Earth mover's distance between uniformly weighted sets."""
    check_dims(a, b)
    m1, m2 = a.m, b.m
    scale = math.lcm(m1, m2)
    cost = pairwise_dist(a.vectors, b.vectors, kind)
    value, flow = transport_cost(np.full(m1, scale // m1), np.full(m2, scale // m2), cost, scale)
    rows, cols = np.nonzero(flow)
    flows = {(int(i), int(j)): float(flow[i, j]) / scale for i, j in zip(rows, cols)}
    return TransportPlan(flows, value)


# ---------------------------------------------------------------------------
# codebook quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Codebook:
    """Fine centroid vocabulary with its precomputed pairwise distance table."""

    centroids: np.ndarray  # (k1, d) float32
    pair_dist: np.ndarray  # (k1, k1) float64
    kind: SimilarityKind

    @property
    def k1(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def build_codebook(centroids, kind: SimilarityKind) -> Codebook:
    """Freeze centroids (unit-normalized in cosine mode) and tabulate d_X."""
    kind = SimilarityKind.parse(kind)
    cents = np.asarray(centroids, dtype=np.float64)
    if cents.ndim != 2 or cents.shape[0] < 1:
        raise DimMismatch("centroids must be a non-empty (k1, d) array")
    if kind is SimilarityKind.COSINE:
        norms = np.linalg.norm(cents, axis=1)
        if np.any(norms == 0):
            raise ZeroVector("zero centroid in cosine mode")
        cents = cents / norms[:, None]
    cents = cents.astype(np.float32)
    table = pairwise_dist(cents, cents, kind)
    table = 0.5 * (table + table.T)
    np.fill_diagonal(table, 0.0)
    cents.setflags(write=False)
    table.setflags(write=False)
    return Codebook(cents, table, kind)


@dataclass(frozen=True, eq=False)
class CodeSet:
    """Quantized form of a vector set: one centroid index per vector."""

    set_id: int
    codes: np.ndarray  # (m,) int64, original vector order
    uniq: np.ndarray  # sorted distinct codes
    counts: np.ndarray  # multiplicity of each entry of ``uniq``

    @classmethod
    def from_codes(cls, set_id: int, codes) -> "CodeSet":
        codes = np.asarray(codes, dtype=np.int64)
        uniq, counts = np.unique(codes, return_counts=True)
        for arr in (codes, uniq, counts):
            arr.setflags(write=False)
        return cls(set_id, codes, uniq, counts)

    @property
    def m(self) -> int:
        return int(self.codes.shape[0])

    @property
    def histogram(self) -> dict[int, int]:
        return {int(c): int(n) for c, n in zip(self.uniq, self.counts)}

    def __eq__(self, other):
        if not isinstance(other, CodeSet):
            return NotImplemented
        return self.set_id == other.set_id and np.array_equal(self.codes, other.codes)

    __hash__ = None


def nearest_centroid(vectors: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Index of the closest centroid per row; lowest index wins ties."""
    if vectors.shape[1] != codebook.dim:
        raise DimMismatch(f"dim {vectors.shape[1]} vs codebook dim {codebook.dim}")
    d = pairwise_dist(vectors, codebook.centroids, codebook.kind)
    return np.argmin(d, axis=1).astype(np.int64)


def encode(vs: VectorSet, codebook: Codebook) -> CodeSet:
    return CodeSet.from_codes(vs.id, nearest_centroid(vs.vectors, codebook))


def _check_codes(cs: CodeSet, codebook: Codebook) -> None:
    if cs.uniq.size and (cs.uniq[0] < 0 or cs.uniq[-1] >= codebook.k1):
        raise CodeOutOfRange(f"set {cs.set_id} has codes outside [0, {codebook.k1})")


def qemd(a: CodeSet, b: CodeSet, codebook: Codebook) -> float:
    """EMD between code histograms with centroid-pair ground costs."""
    _check_codes(a, codebook)
    _check_codes(b, codebook)
    if a.uniq.size == 1 and b.uniq.size == 1:
        return float(codebook.pair_dist[a.uniq[0], b.uniq[0]])
    scale = math.lcm(a.m, b.m)
    cost = codebook.pair_dist[np.ix_(a.uniq, b.uniq)]
    value, _ = transport_cost(a.counts * (scale // a.m), b.counts * (scale // b.m), cost, scale)
    return value


def qch(q: CodeSet, p: CodeSet, codebook: Codebook) -> float:
    """Quantized Chamfer distance, sum form: each q code to its closest p code."""
    _check_codes(q, codebook)
    _check_codes(p, codebook)
    return float(codebook.pair_dist[np.ix_(q.codes, p.uniq)].min(axis=1).sum())


class QueryScorer:
    """Caches the query's rows of the codebook table for repeated qCH calls."""

    def __init__(self, q: CodeSet, codebook: Codebook):
        _check_codes(q, codebook)
        self.rows = codebook.pair_dist[q.codes]  # (m_q, k1)

    def __call__(self, p: CodeSet) -> float:
        return float(self.rows[:, p.uniq].min(axis=1).sum())
