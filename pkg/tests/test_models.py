import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaxsd.errors import DepthExceeded, IncompleteTableError, NormalizationError, VocabMismatch
from relaxsd.models import (
    all_prefixes,
    check_closeness,
    cond_prob,
    dumps_model,
    inverse_cdf,
    joint_probs,
    loads_model,
    mixed_model,
    model_from_dict,
    model_to_dict,
    new_tabular_model,
    random_embeddings,
    random_model,
    sample_next,
    seq_prob,
    tv_conditional,
)

from conftest import constant_model


def test_uniform_model_is_valid():
    m = new_tabular_model(2, 1, {(): [0.5, 0.5]})
    assert m.vocab_size == 2 and m.depth == 1
    assert cond_prob(m, (), 0) == 0.5


def test_row_not_summing_to_one_is_rejected():
    with pytest.raises(NormalizationError):
        new_tabular_model(2, 1, {(): [0.7, 0.4]})


def test_negative_entry_is_rejected():
    with pytest.raises(NormalizationError):
        new_tabular_model(2, 1, {(): [1.2, -0.2]})


def test_missing_prefix_is_rejected():
    tables = {(): [1 / 3] * 3, (0,): [1 / 3] * 3, (2,): [1 / 3] * 3}
    with pytest.raises(IncompleteTableError):
        new_tabular_model(3, 2, tables)


def test_small_fixture_error_is_renormalized():
    m = new_tabular_model(2, 1, {(): [0.7, 0.3 + 5e-10]})
    assert abs(math.fsum(m.row(())) - 1.0) <= 1e-12


def test_tables_are_read_only():
    m = random_model(3, 2, seed=0)
    with pytest.raises(ValueError):
        m.row(())[0] = 1.0


def test_random_model_is_deterministic():
    a, b = random_model(3, 2, 1.0, 42), random_model(3, 2, 1.0, 42)
    for p in a.prefixes():
        assert np.array_equal(a.row(p), b.row(p))
    assert not np.array_equal(a.row(()), random_model(3, 2, 1.0, 43).row(()))


def test_huge_concentration_is_near_uniform():
    m = random_model(3, 2, 1e6, 7)
    for p in m.prefixes():
        assert np.max(np.abs(m.row(p) - 1 / 3)) < 0.01


def test_single_row_model():
    m = random_model(2, 1, 1.0, 0)
    assert list(m.prefixes()) == [()]
    assert abs(math.fsum(m.row(())) - 1.0) <= 1e-12


def test_random_model_rejects_bad_concentration():
    with pytest.raises(ValueError):
        random_model(3, 2, 0.0, 0)


def test_cond_prob_lookup_and_depth():
    m = new_tabular_model(2, 1, {(): [0.7, 0.3]})
    assert cond_prob(m, (), 1) == 0.3
    with pytest.raises(DepthExceeded):
        cond_prob(m, (0,), 0)


def test_seq_prob_examples():
    u = constant_model([0.5, 0.5], 2)
    assert seq_prob(u, (0, 1)) == 0.25
    assert seq_prob(u, ()) == 1.0
    assert seq_prob(new_tabular_model(2, 1, {(): [0.7, 0.3]}), (0,)) == 0.7
    with pytest.raises(DepthExceeded):
        seq_prob(u, (0, 0, 0))


def test_tv_conditional_examples():
    a = new_tabular_model(2, 1, {(): [0.7, 0.3]})
    b = new_tabular_model(2, 1, {(): [0.5, 0.5]})
    assert tv_conditional(a, a, ()) == 0.0
    assert tv_conditional(a, b, ()) == pytest.approx(0.2, abs=1e-15)
    x = new_tabular_model(2, 1, {(): [1.0, 0.0]})
    y = new_tabular_model(2, 1, {(): [0.0, 1.0]})
    assert tv_conditional(x, y, ()) == 1.0
    with pytest.raises(VocabMismatch):
        tv_conditional(a, new_tabular_model(3, 1, {(): [1 / 3] * 3}), ())


def test_check_closeness_examples():
    P = random_model(3, 2, seed=1)
    ok, _, tv = check_closeness(P, P, 0.4)
    assert ok and tv == 0.0
    x = new_tabular_model(2, 1, {(): [1.0, 0.0]})
    y = new_tabular_model(2, 1, {(): [0.0, 1.0]})
    ok, worst, tv = check_closeness(x, y, 0.4)
    assert not ok and worst == () and tv == 1.0


def test_mixture_bounds_conditional_tv():
    P, R = random_model(3, 3, seed=0), random_model(3, 3, seed=1)
    Q = mixed_model(P, R, 0.3)
    for p in P.prefixes():
        assert tv_conditional(P, Q, p) <= 0.3 * tv_conditional(P, R, p) + 1e-15


def test_sample_next_degenerate_and_deterministic():
    m = new_tabular_model(2, 1, {(): [1.0, 0.0]})
    rng = np.random.default_rng(0)
    assert all(sample_next(m, (), rng) == 0 for _ in range(200))
    u = random_model(4, 2, seed=3)
    a = [sample_next(u, (), np.random.default_rng(5)) for _ in range(5)]
    b = [sample_next(u, (), np.random.default_rng(5)) for _ in range(5)]
    assert a == b


def test_inverse_cdf_never_returns_zero_mass_token():
    row = np.array([0.0, 0.5, 0.0, 0.5, 0.0])
    for u in (0.0, 0.25, 0.5, 0.75, 1 - 1e-17, 0.9999999999999999):
        assert row[inverse_cdf(row, u)] > 0


def test_sample_next_frequencies_binomial():
    # each token frequency within 5 sigma of 1/V
    V, n = 4, 100_000
    m = new_tabular_model(V, 1, {(): [1 / V] * V})
    rng = np.random.default_rng(2024)
    counts = np.bincount([sample_next(m, (), rng) for _ in range(n)], minlength=V)
    sigma = math.sqrt(n * (1 / V) * (1 - 1 / V))
    assert np.all(np.abs(counts - n / V) <= 5 * sigma)


@given(st.integers(2, 4), st.integers(1, 4), st.sampled_from([0.2, 1.0, 5.0]), st.integers(0, 10**6))
def test_random_model_invariants(V, D, conc, seed):
    m = random_model(V, D, conc, seed)
    for p in m.prefixes():
        row = m.row(p)
        assert np.all(row >= 0)
        assert abs(math.fsum(row) - 1.0) <= 1e-12
    total = math.fsum(seq_prob(m, s) for s in all_prefixes(V, D))
    assert abs(total - 1.0) <= 1e-10
    assert abs(math.fsum(joint_probs(m, D).ravel()) - 1.0) <= 1e-10


@given(st.integers(2, 4), st.integers(0, 10**6))
def test_tv_conditional_properties(V, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 1)
    for p in P.prefixes():
        d = tv_conditional(P, Q, p)
        assert d == tv_conditional(Q, P, p)
        assert 0.0 <= d <= 1.0
        assert tv_conditional(P, P, p) == 0.0


@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 10**6))
def test_serialization_round_trip(V, D, seed):
    m = random_model(V, D, seed=seed)
    back = loads_model(dumps_model(m))
    for p in m.prefixes():
        assert np.max(np.abs(back.row(p) - m.row(p))) <= 1e-15
    doc = model_to_dict(m)
    assert "" in doc["tables"]
    json.dumps(doc)
    assert model_from_dict(doc).depth == D


def test_embeddings_are_seeded_and_shaped():
    e = random_embeddings(6, 4, 3)
    assert e.vocab_size == 6 and e.dim == 4
    assert np.array_equal(e.vectors, random_embeddings(6, 4, 3).vectors)
