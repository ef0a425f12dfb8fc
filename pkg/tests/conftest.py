import numpy as np
import pytest

from gemindex.core import Corpus, VectorSet
from gemindex.graph_index import BuildParams, build_index
from gemindex.synthetic import random_corpus, topic_corpus


def unit(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def topic_data():
    return topic_corpus(n_sets=160, n_topics=4, d=8, n_queries=20, seed=3)


@pytest.fixture(scope="session")
def topic_index(topic_data):
    return build_index(topic_data.corpus, BuildParams(seed=0, M=8, ef_construction=32, k2=4))


@pytest.fixture(scope="session")
def small_random():
    return random_corpus(40, 6, (2, 5), seed=11)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
