"""Synthetic vector-set corpora with known structure, for tests and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Corpus, VectorSet, make_rng


def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def random_corpus(n: int, d: int, m_range=(3, 8), seed: int = 0) -> Corpus:
    """Isotropic Gaussian vectors; set sizes uniform in m_range (inclusive)."""
    rng = make_rng(seed)
    lo, hi = m_range
    return Corpus.from_arrays(rng.normal(size=(int(rng.integers(lo, hi + 1)), d)) for _ in range(n))


def random_queries(n: int, d: int, m_range=(3, 8), seed: int = 1) -> list[VectorSet]:
    return list(random_corpus(n, d, m_range, seed))


@dataclass
class TopicData:
    corpus: Corpus
    topics: np.ndarray  # primary topic per set
    queries: list[VectorSet]
    qrels: dict[int, set[int]]  # planted: query id -> {source doc}


def topic_corpus(n_sets: int = 400, n_topics: int = 8, d: int = 16, m_range=(4, 12),
                 words_per_topic: int = 24, word_spread: float = 0.6, noise: float = 0.15,
                 stopword_frac: float = 0.0, n_stopwords: int = 4, second_topic_prob: float = 0.3,
                 n_queries: int = 50, query_m_range=(2, 4), query_noise: float = 0.1,
                 seed: int = 0) -> TopicData:
    """Sets drawn from planted topics, optionally salted with shared stopwords.

    Each topic owns a small vocabulary of word vectors scattered around a
    topic center; a set draws its tokens from its primary topic (and, with
    some probability, a secondary one), and replaces roughly
    ``stopword_frac`` of its tokens with words from a global stopword pool.
    Queries are noisy subsets of a source set's content tokens. All emitted
    vectors are unit length.
    """
    rng = make_rng(seed)
    centers = _unit(rng.normal(size=(n_topics, d)))
    words = _unit(centers[:, None, :] + word_spread * _unit(rng.normal(size=(n_topics, words_per_topic, d))))
    stopwords = _unit(rng.normal(size=(max(n_stopwords, 1), d)))
    lo, hi = m_range
    sets, topics, content = [], [], []
    for i in range(n_sets):
        m = int(rng.integers(lo, hi + 1))
        topic = int(rng.integers(n_topics))
        second = int(rng.integers(n_topics)) if rng.random() < second_topic_prob else topic
        n_stop = int(rng.binomial(m, stopword_frac)) if stopword_frac > 0 else 0
        n_stop = min(n_stop, m - 1)
        toks = []
        for j in range(m - n_stop):
            t = topic if (j % 3 != 2 or second == topic) else second
            toks.append(words[t, int(rng.integers(words_per_topic))])
        toks = np.array(toks) + noise * rng.normal(size=(m - n_stop, d)) / np.sqrt(d)
        content.append(toks)
        if n_stop:
            stop = stopwords[rng.integers(len(stopwords), size=n_stop)]
            stop = stop + 0.02 * rng.normal(size=stop.shape) / np.sqrt(d)
            toks = np.concatenate([toks, stop])
        sets.append(VectorSet(i, _unit(toks[rng.permutation(m)])))
        topics.append(topic)

    queries, qrels = [], {}
    qlo, qhi = query_m_range
    for qi in range(n_queries):
        src = int(rng.integers(n_sets))
        toks = content[src]
        mq = min(int(rng.integers(qlo, qhi + 1)), len(toks))
        pick = toks[rng.choice(len(toks), mq, replace=False)]
        pick = pick + query_noise * rng.normal(size=pick.shape) / np.sqrt(d)
        queries.append(VectorSet(qi, _unit(pick)))
        qrels[qi] = {src}
    return TopicData(Corpus(sets), np.array(topics), queries, qrels)


@dataclass
class FarPairs:
    corpus: Corpus
    queries: list[VectorSet]
    positives: list[int]  # positives[i] is the planted match of queries[i]


def far_pair_corpus(n_topics: int = 10, per_topic: int = 40, n_pairs: int = 10, d: int = 16,
                    words_per_topic: int = 12, m_range=(4, 8), seed: int = 0) -> FarPairs:
    """Topics strung along an arc, plus planted sets that pair one end with the other.

    Each planted set carries a query's tokens (drawn from the first topic)
    padded with content from the last topic, so it is a near-perfect
    Chamfer match for the query while its bulk, and hence its transport
    neighborhood, sits at the far end of the chain.
    """
    rng = make_rng(seed)
    a, b = _unit(rng.normal(size=(2, d)))
    b = _unit(b - (b @ a) * a)
    angles = np.linspace(0.0, 0.9 * np.pi, n_topics)
    centers = np.cos(angles)[:, None] * a + np.sin(angles)[:, None] * b
    words = _unit(centers[:, None, :] + 0.25 * _unit(rng.normal(size=(n_topics, words_per_topic, d))))
    lo, hi = m_range
    sets = []
    for t in range(n_topics):
        for _ in range(per_topic):
            m = int(rng.integers(lo, hi + 1))
            sets.append(_unit(words[t, rng.integers(words_per_topic, size=m)] + 0.05 * rng.normal(size=(m, d))))
    queries, positives = [], []
    for i in range(n_pairs):
        q = _unit(words[0, rng.choice(words_per_topic, 2, replace=False)] + 0.05 * rng.normal(size=(2, d)))
        pad = words[-1, rng.integers(words_per_topic, size=hi - 2)] + 0.05 * rng.normal(size=(hi - 2, d))
        sets.append(_unit(np.concatenate([q, pad])))
        queries.append(VectorSet(i, q))
        positives.append(len(sets) - 1)
    return FarPairs(Corpus.from_arrays(sets), queries, positives)
