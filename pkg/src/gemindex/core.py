"""Shared domain types: vector sets, corpora, similarity kinds, seeded RNG."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimMismatch, EmptySet, GemError, ZeroVector


class SimilarityKind(str, enum.Enum):
    COSINE = "cosine"
    L2 = "l2"

    @classmethod
    def parse(cls, value: "str | SimilarityKind") -> "SimilarityKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise GemError(f"unknown similarity kind {value!r}") from None


def as_vectors(data) -> np.ndarray:
    """Coerce to a 2-D float32 array (storage precision)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimMismatch(f"expected a 2-D array of vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GemError("vectors must be finite")
    return arr.astype(np.float32)


@dataclass(frozen=True, eq=False)
class VectorSet:
    """One document or query: an ordered collection of d-dim vectors.

    Vectors are held as float32 (the file precision); every distance is
    computed after widening to float64.
    """

    id: int
    vectors: np.ndarray

    def __post_init__(self):
        vecs = as_vectors(self.vectors)
        if vecs.shape[0] < 1:
            raise EmptySet(f"vector set {self.id} is empty")
        if self.id < 0:
            raise GemError(f"set id must be non-negative, got {self.id}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def as_f64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)

    def __len__(self) -> int:
        return self.m

    def __eq__(self, other):
        if not isinstance(other, VectorSet):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


@dataclass(eq=False)
class Corpus:
    """Dense-id collection of vector sets sharing one dimension."""

    sets: list[VectorSet]
    dim: int = field(default=-1)

    def __post_init__(self):
        self.sets = list(self.sets)
        if not self.sets:
            raise EmptySet("corpus must contain at least one set")
        if self.dim < 0:
            self.dim = self.sets[0].dim
        for i, s in enumerate(self.sets):
            if s.id != i:
                raise GemError(f"corpus ids must be dense 0..N-1; position {i} holds id {s.id}")
            if s.dim != self.dim:
                raise DimMismatch(f"set {s.id} has dim {s.dim}, corpus dim is {self.dim}")

    @classmethod
    def from_arrays(cls, arrays: Iterable) -> "Corpus":
        return cls([VectorSet(i, a) for i, a in enumerate(arrays)])

    @property
    def size(self) -> int:
        return len(self.sets)

    def __len__(self) -> int:
        return len(self.sets)

    def __getitem__(self, i: int) -> VectorSet:
        return self.sets[i]

    def __iter__(self):
        return iter(self.sets)

    def total_vectors(self) -> int:
        return sum(s.m for s in self.sets)

    def stacked(self) -> np.ndarray:
        return np.concatenate([s.vectors for s in self.sets], axis=0)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.dim == other.dim and self.sets == other.sets


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; equal seeds give equal draw sequences."""
    return np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))


def normalize_vectors(vectors: np.ndarray, kind: SimilarityKind) -> np.ndarray:
    kind = SimilarityKind.parse(kind)
    vecs = np.asarray(vectors, dtype=np.float64)
    if kind is SimilarityKind.L2:
        return np.asarray(vectors, dtype=np.float32)
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("cosine mode requires nonzero vectors")
    return (vecs / norms[:, None]).astype(np.float32)


def normalize_set(vs: VectorSet, kind: SimilarityKind, dim: int | None = None) -> VectorSet:
    if dim is not None and vs.dim != dim:
        raise DimMismatch(f"set {vs.id} has dim {vs.dim}, expected {dim}")
    kind = SimilarityKind.parse(kind)
    if kind is SimilarityKind.L2:
        return vs
    return VectorSet(vs.id, normalize_vectors(vs.vectors, kind))


def normalize_corpus(corpus: Corpus, kind: SimilarityKind) -> Corpus:
    """Unit-normalize every vector in cosine mode; identity in l2 mode."""
    kind = SimilarityKind.parse(kind)
    if kind is SimilarityKind.L2:
        return corpus
    return Corpus([normalize_set(s, kind, corpus.dim) for s in corpus.sets], corpus.dim)


def check_dims(*sets: Sequence[VectorSet]) -> int:
    dims = {s.dim for s in sets}
    if len(dims) > 1:
        raise DimMismatch(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()
