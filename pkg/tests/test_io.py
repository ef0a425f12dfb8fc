import struct

import numpy as np
import pytest

from gemindex.core import Corpus, VectorSet
from gemindex.errors import BadMagic, BadVersion, ChecksumMismatch, FormatError, Truncated
from gemindex.graph_index import BuildParams, build_index, delete, insert
from gemindex.io import (index_from_bytes, index_to_bytes, load_index, load_pairs, load_qrels,
                         load_vector_sets, read_vector_sets, save_index, save_qrels,
                         save_vector_sets, write_vector_sets)
from gemindex.search import SearchParams, search
from gemindex.synthetic import random_corpus


class TestVectorSetFile:
    def test_roundtrip(self, tmp_path, small_random):
        path = tmp_path / "c.gemv"
        save_vector_sets(small_random, path)
        assert load_vector_sets(path) == small_random

    def test_layout(self, tmp_path):
        path = tmp_path / "one.gemv"
        write_vector_sets([VectorSet(0, [[1.0, 2.0], [3.0, 4.0]])], path, flags=5)
        raw = path.read_bytes()
        assert raw[:4] == b"GEMV"
        assert struct.unpack("<IQII", raw[4:24]) == (1, 1, 2, 5)
        assert struct.unpack("<QI", raw[24:36]) == (0, 2)
        assert np.frombuffer(raw[36:], "<f4").tolist() == [1.0, 2.0, 3.0, 4.0]
        assert len(raw) == 24 + 12 + 16

    def test_sparse_ids_allowed_for_queries(self, tmp_path):
        path = tmp_path / "q.gemv"
        write_vector_sets([VectorSet(7, [[1.0]]), VectorSet(3, [[2.0]])], path)
        assert [s.id for s in read_vector_sets(path)] == [7, 3]

    def test_bad_magic(self, tmp_path, small_random):
        path = tmp_path / "c.gemv"
        save_vector_sets(small_random, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagic):
            load_vector_sets(path)

    def test_bad_version(self, tmp_path, small_random):
        path = tmp_path / "c.gemv"
        save_vector_sets(small_random, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(BadVersion):
            load_vector_sets(path)

    def test_header_claims_more_records(self, tmp_path):
        sets = random_corpus(10, 3, (1, 3), seed=0).sets
        path = tmp_path / "nine.gemv"
        write_vector_sets(sets[:9], path)
        raw = bytearray(path.read_bytes())
        raw[8:16] = struct.pack("<Q", 10)
        path.write_bytes(bytes(raw))
        with pytest.raises(Truncated):
            load_vector_sets(path)

    def test_trailing_bytes(self, tmp_path, small_random):
        path = tmp_path / "c.gemv"
        save_vector_sets(small_random, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            load_vector_sets(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_vector_sets(tmp_path / "absent.gemv")


@pytest.fixture(scope="module")
def built():
    corpus = random_corpus(60, 6, (2, 5), seed=4)
    return build_index(corpus, BuildParams(M=6, ef_construction=16, seed=2))


class TestIndexFile:
    def test_resave_is_byte_identical(self, built, tmp_path):
        path = tmp_path / "i.gemi"
        save_index(built, path)
        raw = path.read_bytes()
        assert raw[:4] == b"GEMI"
        assert index_to_bytes(load_index(path)) == raw

    def test_same_hits_after_roundtrip(self, built):
        loaded = index_from_bytes(index_to_bytes(built))
        for q in random_corpus(20, 6, (2, 5), seed=8):
            for p in (SearchParams(k=5), SearchParams(k=5, t=1, ef_search=16, rerank_k=8)):
                assert search(q, loaded, p).hits == search(q, built, p).hits

    def test_state_preserved(self, built):
        import copy
        idx = copy.deepcopy(built)
        insert(idx, np.ones((2, 6)))
        delete(idx, 3)
        loaded = index_from_bytes(index_to_bytes(idx))
        assert loaded.graph.tombstones == {3}
        assert loaded.graph.adjacency == idx.graph.adjacency
        assert loaded.graph.c_top == idx.graph.c_top
        assert loaded.graph.shortcuts == idx.graph.shortcuts
        assert loaded.params == idx.params
        assert loaded.naive_memberships == idx.naive_memberships
        assert np.array_equal(loaded.codebook.pair_dist, idx.codebook.pair_dist)
        assert loaded.corpus == idx.corpus

    def test_corrupt_byte_detected(self, built):
        raw = bytearray(index_to_bytes(built))
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(FormatError):
            index_from_bytes(bytes(raw))

    def test_checksum_mismatch(self, built):
        raw = bytearray(index_to_bytes(built))
        raw[-1] ^= 0x01
        with pytest.raises(ChecksumMismatch):
            index_from_bytes(bytes(raw))

    def test_truncated(self, built):
        raw = index_to_bytes(built)
        with pytest.raises(FormatError):
            index_from_bytes(raw[:len(raw) // 3])
        with pytest.raises(Truncated):
            index_from_bytes(raw[:6])

    def test_bad_magic_and_version(self, built):
        raw = bytearray(index_to_bytes(built))
        with pytest.raises(BadMagic):
            index_from_bytes(b"XXXX" + bytes(raw[4:]))
        raw[4:8] = struct.pack("<I", 42)
        with pytest.raises(BadVersion):
            index_from_bytes(bytes(raw))

    def test_edgeless_index(self):
        idx = build_index(Corpus.from_arrays([[[1.0, 0.0]]]), BuildParams(k1=1, k2=1))
        raw = index_to_bytes(idx)
        back = index_from_bytes(raw)
        assert back.graph.n_edges == 0 and index_to_bytes(back) == raw


class TestTextFiles:
    def test_qrels_roundtrip(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        save_qrels({0: {3, 1}, 2: {0}}, path)
        assert path.read_text() == "0\t1\n0\t3\n2\t0\n"
        assert load_qrels(path) == {0: {1, 3}, 2: {0}}

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("# header\n\n1\t2\n")
        assert load_qrels(path) == {1: {2}}

    @pytest.mark.parametrize("text", ["1 2\n", "a\t2\n", "-1\t2\n", "1\t2\t3\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "bad.tsv"
        path.write_text(text)
        with pytest.raises(FormatError):
            load_qrels(path)

    def test_unknown_ids_rejected(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("0\t9\n")
        with pytest.raises(FormatError):
            load_qrels(path, n_docs=5)
        with pytest.raises(FormatError):
            load_qrels(path, query_ids={1})

    def test_pairs(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text("5\t1\n")
        q = VectorSet(5, [[1.0, 0.0]])
        pairs = load_pairs(path, [q], n_docs=3)
        assert pairs[0].query is q and pairs[0].positive_id == 1
        with pytest.raises(FormatError):
            load_pairs(path, [q], n_docs=1)
