"""Versioned little-endian file formats: vector-set files, index files,
and tab-separated qrels / training-pair files."""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import asdict
from typing import BinaryIO, Sequence

import numpy as np

from .clustering import ClusterSpace, CutoffModel
from .core import Corpus, SimilarityKind, VectorSet
from .errors import BadMagic, BadVersion, ChecksumMismatch, FormatError, GemError, Truncated
from .graph_index import BuildParams, GemGraph, GemIndex, TrainingPair
from .metric_space import Codebook, CodeSet

VSET_MAGIC = b"GEMV"
INDEX_MAGIC = b"GEMI"
VSET_VERSION = 1
INDEX_VERSION = 1

_VSET_HEADER = struct.Struct("<4sIQII")  # magic, version, N, d, flags
_RECORD_HEADER = struct.Struct("<QI")  # id, m


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise Truncated(f"{self.what}: needed {n} bytes at offset {self.pos}, "
                            f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def one(self, fmt: str):
        return self.unpack(fmt)[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# vector-set files
# ---------------------------------------------------------------------------


def write_vector_sets(sets: Sequence[VectorSet], path, flags: int = 0) -> None:
    if not sets:
        raise GemError("nothing to write")
    d = sets[0].dim
    buf = io.BytesIO()
    buf.write(_VSET_HEADER.pack(VSET_MAGIC, VSET_VERSION, len(sets), d, flags))
    for s in sets:
        if s.dim != d:
            raise GemError("all sets in one file must share a dimension")
        buf.write(_RECORD_HEADER.pack(s.id, s.m))
        buf.write(np.ascontiguousarray(s.vectors, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def save_vector_sets(corpus: Corpus, path, flags: int = 0) -> None:
    write_vector_sets(corpus.sets, path, flags)


def parse_vector_sets(data: bytes) -> tuple[list[VectorSet], int]:
    r = _Reader(data, "vector-set file")
    if len(data) < 4 or bytes(data[:4]) != VSET_MAGIC:
        raise BadMagic("not a GEMV vector-set file")
    magic, version, n, d, flags = r.unpack("4sIQII")
    if version != VSET_VERSION:
        raise BadVersion(f"vector-set format version {version} unsupported")
    sets = []
    for _ in range(n):
        sid, m = r.unpack("QI")
        vecs = r.array("<f4", m * d).reshape(m, d)
        sets.append(VectorSet(int(sid), vecs))
    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes after {n} records")
    return sets, flags


def read_vector_sets(path) -> list[VectorSet]:
    """Any vector-set file (queries included); ids need not be dense."""
    return parse_vector_sets(_read_bytes(path))[0]


def load_vector_sets(path) -> Corpus:
    return Corpus(read_vector_sets(path))


# ---------------------------------------------------------------------------
# index files
# ---------------------------------------------------------------------------


def _section(out: io.BytesIO, tag: bytes, payload: bytes) -> None:
    out.write(struct.pack("<4sQ", tag, len(payload)))
    out.write(payload)


def _params_json(params: BuildParams) -> bytes:
    return json.dumps(asdict(params), sort_keys=True, separators=(",", ":")).encode()


def index_to_bytes(index: GemIndex) -> bytes:
    cb, space, graph = index.codebook, index.space, index.graph
    out = io.BytesIO()
    out.write(struct.pack("<4sI", INDEX_MAGIC, INDEX_VERSION))

    kind_code = 0 if index.kind is SimilarityKind.COSINE else 1
    _section(out, b"META", struct.pack("<BQ", kind_code, index.params.seed & (2**64 - 1))
             + _params_json(index.params))

    p = io.BytesIO()
    p.write(struct.pack("<II", cb.k1, cb.dim))
    p.write(np.ascontiguousarray(cb.centroids, "<f4").tobytes())
    p.write(np.ascontiguousarray(cb.pair_dist, "<f8").tobytes())
    _section(out, b"CODE", p.getvalue())

    p = io.BytesIO()
    p.write(struct.pack("<IIQ", space.k2, space.index_centroids.shape[1], space.n_sets))
    p.write(np.ascontiguousarray(space.index_centroids, "<f4").tobytes())
    p.write(np.ascontiguousarray(space.quant_to_index, "<u4").tobytes())
    p.write(np.ascontiguousarray(space.doc_freq, "<u8").tobytes())
    _section(out, b"CLUS", p.getvalue())

    p = io.BytesIO()
    p.write(struct.pack("<QI", index.corpus.size, index.dim))
    for s in index.corpus:
        p.write(struct.pack("<I", s.m))
        p.write(np.ascontiguousarray(s.vectors, "<f4").tobytes())
    _section(out, b"SETS", p.getvalue())

    p = io.BytesIO()
    p.write(struct.pack("<Q", len(index.codes)))
    for v, cs in enumerate(index.codes):
        p.write(struct.pack("<I", cs.m))
        p.write(np.ascontiguousarray(cs.codes, "<u4").tobytes())
        c_top = graph.c_top[v]
        p.write(struct.pack("<II", index.naive_memberships[v], len(c_top)))
        p.write(np.asarray(c_top, "<u4").tobytes())
    _section(out, b"ASGN", p.getvalue())

    p = io.BytesIO()
    model = index.model
    if model is None:
        p.write(struct.pack("<B", 0))
    else:
        p.write(struct.pack("<BII", 1, model.r_max, model.n_nodes))
        for i in range(model.n_nodes):
            p.write(struct.pack("<idiii", model.feature[i], model.threshold[i], model.left[i],
                                model.right[i], model.value[i]))
    _section(out, b"TREE", p.getvalue())

    p = io.BytesIO()
    p.write(struct.pack("<IIQ", graph.degree_cap, graph.s_max, graph.n_vertices))
    for v, adj in enumerate(graph.adjacency):
        p.write(struct.pack("<I", len(adj)))
        for u in adj:
            p.write(struct.pack("<IB", u, 1 if graph.is_shortcut(u, v) else 0))
    _section(out, b"GRPH", p.getvalue())

    tombs = sorted(graph.tombstones)
    _section(out, b"TOMB", struct.pack("<Q", len(tombs)) + np.asarray(tombs, "<u8").tobytes())

    body = out.getvalue()
    return body + hashlib.blake2b(body, digest_size=8).digest()


def save_index(index: GemIndex, path) -> None:
    data = index_to_bytes(index)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _expect(r: _Reader, tag: bytes) -> _Reader:
    got, length = r.unpack("4sQ")
    if got != tag:
        raise FormatError(f"expected section {tag!r}, found {got!r}")
    return _Reader(bytes(r.take(length)), f"section {tag.decode()}")


def index_from_bytes(data: bytes) -> GemIndex:
    if len(data) < 4 or data[:4] != INDEX_MAGIC:
        raise BadMagic("not a GEMI index file")
    if len(data) < 16:
        raise Truncated("index file shorter than its header and checksum")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != INDEX_VERSION:
        raise BadVersion(f"index format version {version} unsupported")
    body, digest = data[:-8], data[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise ChecksumMismatch("index checksum mismatch (corrupt or truncated file)")
    r = _Reader(body, "index file")
    r.take(8)

    s = _expect(r, b"META")
    kind_code, _seed = s.unpack("BQ")
    kind = SimilarityKind.COSINE if kind_code == 0 else SimilarityKind.L2
    params = BuildParams(**json.loads(bytes(s.take(len(s.buf) - s.pos)).decode()))

    s = _expect(r, b"CODE")
    k1, d = s.unpack("II")
    cents = s.array("<f4", k1 * d).reshape(k1, d)
    pair = s.array("<f8", k1 * k1).reshape(k1, k1)
    cents.setflags(write=False)
    pair.setflags(write=False)
    codebook = Codebook(cents, pair, kind)

    s = _expect(r, b"CLUS")
    k2, d2, n_sets = s.unpack("IIQ")
    coarse = s.array("<f4", k2 * d2).reshape(k2, d2)
    q2i = s.array("<u4", k1).astype(np.int64)
    df = s.array("<u8", k2).astype(np.int64)
    space = ClusterSpace(coarse, q2i, df, int(n_sets), kind)

    s = _expect(r, b"SETS")
    n, dim = s.unpack("QI")
    sets = []
    for i in range(n):
        m = s.one("I")
        sets.append(VectorSet(i, s.array("<f4", m * dim).reshape(m, dim)))
    corpus = Corpus(sets, dim)

    s = _expect(r, b"ASGN")
    n_codes = s.one("Q")
    codes, c_tops, naive = [], [], []
    for v in range(n_codes):
        m = s.one("I")
        codes.append(CodeSet.from_codes(v, s.array("<u4", m).astype(np.int64)))
        nv, r_len = s.unpack("II")
        naive.append(nv)
        c_tops.append(tuple(int(c) for c in s.array("<u4", r_len)))

    s = _expect(r, b"TREE")
    model = None
    if s.one("B"):
        r_max, n_nodes = s.unpack("II")
        model = CutoffModel(r_max=r_max)
        for _ in range(n_nodes):
            f, thr, left, right, value = s.unpack("idiii")
            i = model._add(f, thr, value)
            model.left[i], model.right[i] = left, right

    s = _expect(r, b"GRPH")
    cap, s_max, nv = s.unpack("IIQ")
    graph = GemGraph(cap, s_max)
    for v in range(nv):
        graph.add_vertex(c_tops[v])
    for v in range(nv):
        deg = s.one("I")
        for _ in range(deg):
            u, flag = s.unpack("IB")
            if u >= nv:
                raise FormatError(f"vertex {v} lists out-of-range neighbor {u}")
            graph.adjacency[v].append(u)
            if flag:
                graph.shortcuts.add(graph._key(u, v))
        graph.adjacency[v].sort()

    s = _expect(r, b"TOMB")
    graph.tombstones = {int(x) for x in s.array("<u8", s.one("Q"))}
    if not r.done():
        raise FormatError("unexpected bytes after the last section")
    if not (corpus.size == n_codes == nv):
        raise FormatError("section record counts disagree")
    return GemIndex(corpus, kind, codebook, space, codes, graph, params, model, naive)


def load_index(path) -> GemIndex:
    return index_from_bytes(_read_bytes(path))


# ---------------------------------------------------------------------------
# qrels / training pairs
# ---------------------------------------------------------------------------


def read_id_pairs(path) -> list[tuple[int, int]]:
    """``query_id<TAB>doc_id`` lines; blank lines and ``#`` comments skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected two tab-separated ids")
            try:
                q, d = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: ids must be integers") from None
            if q < 0 or d < 0:
                raise FormatError(f"{path}:{lineno}: ids must be non-negative")
            out.append((q, d))
    return out


def write_id_pairs(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q, d in pairs:
            fh.write(f"{q}\t{d}\n")


def load_qrels(path, query_ids=None, n_docs: int | None = None) -> dict[int, set[int]]:
    qrels: dict[int, set[int]] = {}
    for q, d in read_id_pairs(path):
        if query_ids is not None and q not in query_ids:
            raise FormatError(f"qrels reference unknown query {q}")
        if n_docs is not None and d >= n_docs:
            raise FormatError(f"qrels reference unknown doc {d}")
        qrels.setdefault(q, set()).add(d)
    return qrels


def save_qrels(qrels: dict[int, set[int]], path) -> None:
    write_id_pairs(((q, d) for q in sorted(qrels) for d in sorted(qrels[q])), path)


def load_pairs(path, queries: Sequence[VectorSet], n_docs: int) -> list[TrainingPair]:
    by_id = {q.id: q for q in queries}
    pairs = []
    for q, d in read_id_pairs(path):
        if q not in by_id:
            raise FormatError(f"pairs reference unknown query {q}")
        if d >= n_docs:
            raise FormatError(f"pairs reference unknown doc {d}")
        pairs.append(TrainingPair(by_id[q], d))
    return pairs
