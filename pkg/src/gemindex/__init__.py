"""Graph index for multi-vector (vector-set) retrieval."""

from .core import Corpus, SimilarityKind, VectorSet, make_rng, normalize_corpus
from .errors import GemError

__all__ = ["Corpus", "GemError", "SimilarityKind", "VectorSet", "make_rng", "normalize_corpus"]
__version__ = "0.1.0"
