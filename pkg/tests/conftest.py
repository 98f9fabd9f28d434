import numpy as np
import pytest

from completion_lab.models import ColumnPmf, MarkovColumnSource, column_index, column_symbols

GENERIC_PROBS = (0.4, 0.1, 0.1, 0.4)

# entropy of the generic pmf, evaluated independently where tests need it
H_GENERIC_JOINT = 1.721928094887362
STAY9_RATE = 0.4689955935892812


def identical_rows_chain(stay: float = 0.9, k: int = 2) -> MarkovColumnSource:
    """Column chain whose rows are always equal; the shared symbol follows a
    binary stay-``stay`` chain.  Mixed states are transient feeders."""
    s = 2**k
    t = np.zeros((s, s))
    base = np.array([[stay, 1.0 - stay], [1.0 - stay, stay]])
    for state in range(s):
        a = column_symbols(state, k, 2)[0]
        t[state, column_index([0] * k, 2)] = base[a, 0]
        t[state, column_index([1] * k, 2)] = base[a, 1]
    return MarkovColumnSource.from_transition(k, 2, t)


def random_pmf(rng: np.random.Generator, k: int, q: int = 2) -> ColumnPmf:
    probs = rng.gamma(1.0, 1.0, q**k)
    return ColumnPmf(k, q, probs / probs.sum())


def random_chain(rng: np.random.Generator, k: int, q: int = 2) -> MarkovColumnSource:
    s = q**k
    t = rng.gamma(1.0, 1.0, (s, s))
    return MarkovColumnSource.from_transition(k, q, t / t.sum(axis=1, keepdims=True))


def random_model(rng: np.random.Generator, k: int, q: int = 2):
    return random_pmf(rng, k, q) if rng.random() < 0.5 else random_chain(rng, k, q)


@pytest.fixture
def generic_pmf() -> ColumnPmf:
    return ColumnPmf(2, 2, GENERIC_PROBS)


@pytest.fixture
def uniform_pair() -> ColumnPmf:
    return ColumnPmf.uniform(2, 2)


@pytest.fixture
def identical_rows_uniform() -> ColumnPmf:
    return ColumnPmf.identical_rows(2, 2, [0.5, 0.5])


@pytest.fixture
def product_pmf() -> ColumnPmf:
    return ColumnPmf.product([[0.7, 0.3], [0.6, 0.4]])


@pytest.fixture
def stay9_chain() -> MarkovColumnSource:
    return MarkovColumnSource.from_transition(1, 2, [[0.9, 0.1], [0.1, 0.9]])


@pytest.fixture
def stay8_four_state() -> MarkovColumnSource:
    t = np.full((4, 4), 0.2 / 3)
    np.fill_diagonal(t, 0.8)
    return MarkovColumnSource.from_transition(2, 2, t)
