import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from relaxsd.models import new_tabular_model, random_model

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def row_model(*rows_by_prefix, V=None):
    """Model from ``{prefix: row}`` with the depth inferred from the longest prefix."""
    tables = dict(rows_by_prefix[0])
    depth = max(len(p) for p in tables) + 1
    V = V or len(next(iter(tables.values())))
    return new_tabular_model(V, depth, tables)


def constant_model(row, depth):
    """Every conditional equals ``row``."""
    from relaxsd.models import all_prefixes
    V = len(row)
    return new_tabular_model(V, depth, {p: row for n in range(depth) for p in all_prefixes(V, n)})


@st.composite
def model_pairs(draw, max_vocab=4, max_L=3):
    V = draw(st.integers(2, max_vocab))
    L = draw(st.integers(1, max_L))
    conc = draw(st.sampled_from([0.3, 1.0, 3.0]))
    seed = draw(st.integers(0, 10_000))
    P = random_model(V, L + 1, conc, 2 * seed)
    Q = random_model(V, L + 1, conc, 2 * seed + 1)
    return P, Q, L


@st.composite
def prob_rows(draw, V):
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=V, max_size=V).filter(lambda r: sum(r) > 1e-3))
    r = np.array(raw)
    return r / r.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
