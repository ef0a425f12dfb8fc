import numpy as np
import pytest

from gemindex.core import (Corpus, SimilarityKind, VectorSet, as_vectors, make_rng,
                           normalize_corpus, normalize_set)
from gemindex.errors import DimMismatch, EmptySet, GemError, ZeroVector


class TestSimilarityKind:
    def test_parse_accepts_strings_and_members(self):
        assert SimilarityKind.parse("COSINE") is SimilarityKind.COSINE
        assert SimilarityKind.parse(SimilarityKind.L2) is SimilarityKind.L2

    def test_parse_rejects_unknown(self):
        with pytest.raises(GemError):
            SimilarityKind.parse("manhattan")


class TestVectorSet:
    def test_shape_and_precision(self):
        vs = VectorSet(3, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert (vs.m, vs.dim) == (3, 2)
        assert vs.vectors.dtype == np.float32
        assert vs.as_f64().dtype == np.float64

    def test_vectors_are_read_only(self):
        vs = VectorSet(0, np.ones((2, 3)))
        with pytest.raises(ValueError):
            vs.vectors[0, 0] = 5.0

    def test_single_vector_is_promoted(self):
        assert VectorSet(0, [1.0, 0.0, 0.0]).m == 1

    def test_empty_set_rejected(self):
        with pytest.raises(EmptySet):
            VectorSet(0, np.zeros((0, 4)))

    def test_non_finite_rejected(self):
        with pytest.raises(GemError):
            as_vectors([[1.0, np.nan]])
        with pytest.raises(GemError):
            as_vectors([[np.inf, 0.0]])

    def test_equality_is_by_value(self):
        a = VectorSet(1, [[1.0, 2.0]])
        assert a == VectorSet(1, np.array([[1.0, 2.0]], dtype=np.float32))
        assert a != VectorSet(2, [[1.0, 2.0]])


class TestCorpus:
    def test_ids_must_be_dense(self):
        with pytest.raises(GemError):
            Corpus([VectorSet(0, [[1.0]]), VectorSet(2, [[1.0]])])

    def test_dims_must_agree(self):
        with pytest.raises(DimMismatch):
            Corpus([VectorSet(0, [[1.0, 0.0]]), VectorSet(1, [[1.0, 0.0, 0.0]])])

    def test_from_arrays_and_counts(self):
        c = Corpus.from_arrays([np.ones((2, 3)), np.ones((4, 3))])
        assert c.size == 2 and c.dim == 3
        assert c.total_vectors() == 6
        assert c.stacked().shape == (6, 3)
        assert [s.id for s in c] == [0, 1]


class TestRng:
    def test_equal_seeds_equal_draws(self):
        assert np.array_equal(make_rng(7).random(5), make_rng(7).random(5))
        assert not np.array_equal(make_rng(7).random(5), make_rng(8).random(5))


class TestNormalize:
    def test_three_four_five(self):
        c = Corpus.from_arrays([[[3.0, 4.0]]])
        out = normalize_corpus(c, SimilarityKind.COSINE)
        np.testing.assert_allclose(out[0].vectors[0], [0.6, 0.8], atol=1e-7)

    def test_l2_is_identity(self, small_random):
        assert normalize_corpus(small_random, SimilarityKind.L2) is small_random

    def test_cosine_gives_unit_norms(self, small_random):
        out = normalize_corpus(small_random, "cosine")
        norms = np.linalg.norm(out.stacked().astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_zero_vector_rejected(self):
        c = Corpus.from_arrays([[[1.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]]])
        with pytest.raises(ZeroVector):
            normalize_corpus(c, SimilarityKind.COSINE)

    def test_dim_checked(self):
        with pytest.raises(DimMismatch):
            normalize_set(VectorSet(0, [[1.0, 2.0]]), SimilarityKind.COSINE, dim=3)
