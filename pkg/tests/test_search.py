import copy

import numpy as np
import pytest

from gemindex.core import SimilarityKind, VectorSet, normalize_set
from gemindex.errors import DimMismatch, EmptyGraph, GemError
from gemindex.eval import brute_force_topk
from gemindex.graph_index import BuildParams, build_index, delete
from gemindex.metric_space import chamfer_similarity, encode, qch
from gemindex.search import (SearchParams, SearchStats, beam_search, cluster_filter, rerank, search,
                             select_entries)
from gemindex.synthetic import random_corpus, random_queries
from gemindex.traversal import Candidate, beam_traverse

from conftest import unit

COS = SimilarityKind.COSINE


class TestParams:
    def test_defaults(self):
        p = SearchParams()
        assert (p.k, p.t, p.ef_search, p.rerank_k) == (10, 4, 64, 40)

    def test_rerank_capped_by_ef(self):
        assert SearchParams(k=5, ef_search=12).rerank_k == 12

    @pytest.mark.parametrize("kw", [dict(k=0), dict(t=0), dict(k=10, rerank_k=5),
                                    dict(ef_search=10, rerank_k=20), dict(max_threads=0)])
    def test_invalid(self, kw):
        with pytest.raises(GemError):
            SearchParams(**kw)


class TestClusterFilter:
    def test_large_t_selects_everything(self, rng):
        cents = unit(rng.normal(size=(6, 4)))
        q = VectorSet(0, unit(rng.normal(size=(3, 4))))
        assert cluster_filter(q, cents, COS, 6) == list(range(6))
        assert cluster_filter(q, cents, COS, 50) == list(range(6))

    def test_token_on_centroid(self, rng):
        cents = unit(rng.normal(size=(8, 4)))
        assert cluster_filter(VectorSet(0, cents[5:6]), cents, COS, 1) == [5]

    @pytest.mark.parametrize("kind", [SimilarityKind.COSINE, SimilarityKind.L2])
    def test_union_of_per_token_top_t(self, rng, kind):
        cents = rng.normal(size=(10, 5))
        q = VectorSet(0, rng.normal(size=(4, 5)))
        want = set()
        for x in q.as_f64():
            if kind is COS:
                scores = [float(x @ c) / (np.linalg.norm(x) * np.linalg.norm(c)) for c in cents]
            else:
                scores = [-float(np.linalg.norm(x - c)) for c in cents]
            want |= set(sorted(range(10), key=lambda j: (-scores[j], j))[:2])
        assert set(cluster_filter(q, cents, kind, 2)) == want

    def test_errors(self, rng):
        cents = rng.normal(size=(3, 4))
        with pytest.raises(DimMismatch):
            cluster_filter(VectorSet(0, np.ones((1, 3))), cents, COS, 1)


class TestTraversal:
    def line(self, n):
        return lambda v: [u for u in (v - 1, v + 1) if 0 <= u < n]

    def test_exhaustive_when_ef_covers_graph(self):
        score = lambda v: abs(v - 13) * 1.0
        got = beam_traverse([0], score, self.line(20), ef=20)
        assert [c.id for c in got] == sorted(range(20), key=lambda v: (abs(v - 13), v))

    def test_admit_blocks(self):
        got = beam_traverse([0], float, self.line(10), ef=10, admit=lambda v: v < 5)
        assert {c.id for c in got} == set(range(5))

    def test_returnable_still_traversed(self):
        got = beam_traverse([0], lambda v: -v, self.line(6), ef=6, returnable=lambda v: v != 3)
        assert {c.id for c in got} == {0, 1, 2, 4, 5}

    def test_thread_count_irrelevant(self, rng):
        n = 200
        nbrs = {v: sorted(set(rng.integers(n, size=6).tolist()) - {v}) for v in range(n)}
        for v in list(nbrs):
            for u in nbrs[v]:
                if v not in nbrs[u]:
                    nbrs[u].append(v)
        vals = rng.random(n)
        one = beam_traverse([0, 50, 100], lambda v: vals[v], nbrs.__getitem__, ef=12)
        four = beam_traverse([0, 50, 100], lambda v: vals[v], nbrs.__getitem__, ef=12, max_threads=4)
        assert one == four

    def test_candidates_order(self):
        assert sorted([Candidate(1.0, 5), Candidate(1.0, 2), Candidate(0.5, 9)]) == \
            [Candidate(0.5, 9), Candidate(1.0, 2), Candidate(1.0, 5)]


class TestBeamSearch:
    def test_exhaustive_qch_top_ef(self, topic_index, topic_data):
        idx = topic_index
        q = normalize_set(topic_data.queries[0], COS)
        cq = encode(q, idx.codebook)
        ef = idx.graph.n_live
        params = SearchParams(k=10, t=idx.space.k2, ef_search=ef, rerank_k=10)
        clusters = list(range(idx.space.k2))
        found = beam_search(lambda v: qch(cq, idx.codes[v], idx.codebook), idx.graph, select_entries(idx.graph, clusters), clusters, params)
        oracle = sorted((qch(cq, idx.codes[v], idx.codebook), v) for v in range(idx.graph.n_vertices))
        assert [(c.dist, c.id) for c in found] == oracle[:ef]

    def test_single_vertex(self):
        from gemindex.core import Corpus
        idx = build_index(Corpus.from_arrays([[[1.0, 0.0]]]), BuildParams(k1=1, k2=1))
        res = search([[0.0, 1.0]], idx, SearchParams(k=1, ef_search=1))
        assert res.ids == [0]

    def test_excluded_cluster_is_unreachable(self, topic_index):
        idx = topic_index
        g = idx.graph
        target = next(v for v in range(g.n_vertices) if len(g.c_top[v]) == 1)
        only = g.c_top[target][0]
        others = [c for c in range(idx.space.k2) if c != only]
        q = normalize_set(idx.corpus[target], COS)
        cq = encode(q, idx.codebook)
        found = beam_search(lambda v: qch(cq, idx.codes[v], idx.codebook), g,
                            select_entries(g, others), others,
                            SearchParams(k=10, ef_search=g.n_vertices, rerank_k=10))
        assert target not in {c.id for c in found}

    def test_select_entries(self, topic_index):
        g = topic_index.graph
        assert select_entries(g, [0, 1]) == list(dict.fromkeys([g.members(0)[0], g.members(1)[0]]))
        rnd = select_entries(g, [0, 1], deterministic=False, rng=np.random.default_rng(3))
        assert len(rnd) <= 2 and all(v in g.members(0) + g.members(1) for v in rnd)


class TestRerank:
    def corpus(self, rng):
        return random_corpus(12, 4, (2, 4), seed=9)

    def test_rerank_one_keeps_best_qch(self, rng):
        corpus = self.corpus(rng)
        q = corpus[4]
        cands = [Candidate(0.1, 7), Candidate(0.2, 4), Candidate(0.3, 1)]
        hits = rerank(q, cands, corpus, COS, 1, 1)
        assert hits == [(7, pytest.approx(chamfer_similarity(q, corpus[7], COS)))]

    def test_true_best_rises(self, rng):
        corpus = self.corpus(rng)
        q = corpus[4]
        cands = [Candidate(float(i), v) for i, v in enumerate([0, 1, 2, 3, 4, 5])]
        hits = rerank(q, cands, corpus, COS, 6, 3)
        scored = sorted(((chamfer_similarity(q, corpus[v], COS), v) for v in range(6)), key=lambda s: (-s[0], s[1]))
        assert [h[0] for h in hits] == [v for _, v in scored[:3]]
        assert hits[0][0] == 4

    def test_ties_by_id(self):
        from gemindex.core import Corpus
        corpus = Corpus.from_arrays([[[1.0, 0.0]]] * 4)
        stats = SearchStats()
        hits = rerank(VectorSet(0, [[1.0, 0.0]]), [Candidate(0.0, 3), Candidate(0.0, 1), Candidate(0.0, 2)],
                      corpus, COS, 3, 3, stats)
        assert [h[0] for h in hits] == [1, 2, 3]
        assert stats.exact_evals == 3


@pytest.fixture(scope="module")
def random_index():
    corpus = random_corpus(200, 8, (3, 8), seed=21)
    return build_index(corpus, BuildParams(seed=0))


class TestSearch:
    def test_self_retrieval(self, topic_index):
        for v in (0, 17, 99):
            res = search(topic_index.corpus[v], topic_index, SearchParams(k=5, use_cluster_filter=False))
            assert res.ids[0] == v

    def test_exhaustive_equivalence(self, random_index):
        idx = random_index
        n = idx.corpus.size
        params = SearchParams(k=10, t=idx.space.k2, ef_search=n, rerank_k=n)
        for q in random_queries(10, 8, (3, 8), seed=5):
            want = brute_force_topk(q, idx.corpus, 10)
            got = search(q, idx, params).hits
            assert [h[0] for h in got] == [w[0] for w in want]
            np.testing.assert_allclose([h[1] for h in got], [w[1] for w in want], atol=1e-12)

    def test_thread_and_repeat_independence(self, topic_index, topic_data):
        for q in topic_data.queries[:5]:
            a = search(q, topic_index, SearchParams(k=10))
            b = search(q, topic_index, SearchParams(k=10, max_threads=4))
            c = search(q, topic_index, SearchParams(k=10))
            assert a.hits == b.hits == c.hits

    def test_seeded_random_entries_repeatable(self, topic_index, topic_data):
        p = SearchParams(k=10, deterministic=False, seed=7)
        q = topic_data.queries[1]
        assert search(q, topic_index, p).hits == search(q, topic_index, p).hits

    def test_results_sorted_and_sized(self, topic_index, topic_data):
        for q in topic_data.queries:
            res = search(q, topic_index, SearchParams(k=7))
            assert len(res.ids) <= 7 and len(set(res.ids)) == len(res.ids)
            keys = [(-s, i) for i, s in res.hits]
            assert keys == sorted(keys)
            assert res.stats.exact_evals <= res.stats.qch_evals

    def test_larger_beam_never_evaluates_less(self, topic_index, topic_data):
        q = topic_data.queries[2]
        small = search(q, topic_index, SearchParams(k=10, ef_search=16, rerank_k=16)).stats.qch_evals
        big = search(q, topic_index, SearchParams(k=10, ef_search=128, rerank_k=16)).stats.qch_evals
        assert big >= small

    def test_visited_sound(self, topic_index, topic_data):
        res = search(topic_data.queries[3], topic_index, SearchParams(k=10), trace=True)
        seen = res.stats.discovered_at
        assert set(res.ids) <= set(seen)
        assert len(seen) == res.stats.qch_evals

    def test_tombstones_excluded(self, topic_index, topic_data):
        idx = copy.deepcopy(topic_index)
        q = topic_data.queries[0]
        first = search(q, idx, SearchParams(k=10)).ids
        for v in first[:3]:
            delete(idx, v)
        again = search(q, idx, SearchParams(k=10)).ids
        assert not set(first[:3]) & set(again)

    def test_all_deleted(self, topic_index):
        idx = copy.deepcopy(topic_index)
        idx.graph.tombstones.update(range(idx.graph.n_vertices))
        with pytest.raises(EmptyGraph):
            search(idx.corpus[0], idx)

    def test_dim_mismatch(self, topic_index):
        with pytest.raises(DimMismatch):
            search(np.ones((2, topic_index.dim + 1)), topic_index)
