import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from relaxsd.errors import DegenerateResidual
from relaxsd.models import TokenEmbedding, new_tabular_model, random_embeddings, random_model
from relaxsd.rules import (
    ConstantAcceptance,
    LanternPP,
    LanternResidual,
    MultiplicativeRelax,
    OptimalGStar,
    ShiftedAcceptance,
    Vanilla,
    VanillaResidual,
    accept_prob_lantern,
    accept_prob_relaxed,
    accept_prob_vanilla,
    gstar_row,
    knn_aggregate_set,
    lantern_row,
    modified_target_lantern,
    resample_dist_gstar,
    resample_dist_lantern,
    resample_dist_vanilla,
    safe_ratio,
)
from relaxsd.schedules import uniform_schedule


def one_row(*rows):
    return [new_tabular_model(len(r), 1, {(): list(r)}) for r in rows]


def line_embeddings(V):
    """Tokens on a line at their own index: neighbours by id distance."""
    return TokenEmbedding(np.arange(V, dtype=float)[:, None])


# -- acceptance ---------------------------------------------------------------

def test_vanilla_acceptance_examples():
    P, Q = one_row([0.1, 0.9], [0.2, 0.8])
    assert accept_prob_vanilla(P, Q, (), 0) == pytest.approx(0.5, abs=1e-15)
    P, Q = one_row([0.5, 0.5], [0.25, 0.75])
    assert accept_prob_vanilla(P, Q, (), 0) == 1.0
    P, Q = one_row([0.0, 1.0], [0.0, 1.0])
    assert accept_prob_vanilla(P, Q, (), 0) == 1.0


def test_safe_ratio_conventions():
    assert safe_ratio(0.0, 0.0) == 1.0
    assert safe_ratio(0.3, 0.0) == math.inf
    assert np.array_equal(safe_ratio([0.0, 1.0, 2.0], [0.0, 0.0, 4.0]), [1.0, math.inf, 0.5])


def test_relaxed_acceptance_examples():
    P, Q = one_row([0.1, 0.9], [0.2, 0.8])
    assert accept_prob_relaxed(P, Q, (), 0, 2.0) == 1.0
    P, Q = one_row([0.1, 0.9], [0.4, 0.6])
    assert accept_prob_relaxed(P, Q, (), 0, 2.0) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        accept_prob_relaxed(P, Q, (), 0, 0.0)


@given(st.integers(2, 5), st.integers(0, 10**6))
def test_relaxed_with_unit_omega_is_vanilla(V, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 7)
    for p in P.prefixes():
        for x in range(V):
            assert accept_prob_relaxed(P, Q, p, x, 1.0) == accept_prob_vanilla(P, Q, p, x)


@given(st.integers(2, 5), st.floats(1.0, 10.0), st.integers(0, 10**6))
def test_relaxed_dominates_vanilla(V, omega, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 7)
    for p in P.prefixes():
        f = MultiplicativeRelax(uniform_schedule(omega, 1)).row(P, Q, p, 1)
        assert np.all(f >= Vanilla().row(P, Q, p, 1))
        assert np.all((0 <= f) & (f <= 1))


def test_schedule_position_out_of_range():
    P, Q = random_model(2, 2, seed=0), random_model(2, 2, seed=1)
    with pytest.raises(ValueError):
        MultiplicativeRelax(uniform_schedule(2.0, 2)).row(P, Q, (), 3)


# -- LANTERN aggregation -------------------------------------------------------

def test_zero_budget_keeps_only_anchor():
    emb = random_embeddings(5, 3, 0)
    P = [0.2] * 5
    for a in range(5):
        assert knn_aggregate_set(emb, P, a, 3, 0.0) == {a}


def test_single_neighbour_admitted_below_budget():
    emb = line_embeddings(2)
    assert knn_aggregate_set(emb, [0.1, 0.05], 0, 1, 2.0) == {0, 1}


def test_single_neighbour_rejected_at_budget():
    emb = line_embeddings(2)
    assert knn_aggregate_set(emb, [0.1, 0.3], 0, 1, 2.0) == {0}


def test_equal_mass_is_not_admitted():
    emb = line_embeddings(2)
    assert knn_aggregate_set(emb, [0.25, 0.5], 0, 1, 2.0) == {0}


def test_greedy_skips_heavy_neighbour_and_continues():
    # neighbours of 0 in order 1, 2, 3; token 1 never fits
    emb = line_embeddings(4)
    P = [0.2, 0.5, 0.1, 0.2]
    assert knn_aggregate_set(emb, P, 0, 3, 1.2) == {0, 2}
    assert knn_aggregate_set(emb, P, 0, 3, 2.0) == {0, 2, 3}


def test_ties_break_to_lower_id():
    emb = line_embeddings(3)  # from 1, tokens 0 and 2 are equidistant
    assert knn_aggregate_set(emb, [0.1, 0.5, 0.1], 1, 1, 1.0) == {0, 1}


def test_k_out_of_range():
    emb = random_embeddings(3, 2, 0)
    with pytest.raises(ValueError):
        knn_aggregate_set(emb, [1 / 3] * 3, 0, 3, 1.0)
    with pytest.raises(ValueError):
        knn_aggregate_set(emb, [1 / 3] * 3, 0, 0, 1.0)


@given(st.integers(3, 7), st.integers(1, 6), st.floats(0.0, 4.0), st.integers(0, 10**6))
def test_aggregate_set_invariants(V, k, lam, seed):
    assume(k < V)
    emb = random_embeddings(V, 4, seed)
    P = np.random.default_rng(seed).dirichlet(np.ones(V))
    for a in range(V):
        A = knn_aggregate_set(emb, P, a, k, lam)
        assert a in A
        assert len(A) <= k + 1
        if lam > 0 and len(A) > 1:
            assert math.fsum(P[t] for t in A if t != a) < lam * P[a]
        near = set(sorted((t for t in range(V) if t != a),
                          key=lambda t: (np.linalg.norm(emb.vectors[t] - emb.vectors[a]), t))[:k])
        assert A - {a} <= near


def test_modified_target_examples():
    emb = line_embeddings(3)
    P = new_tabular_model(3, 1, {(): [0.5, 0.3, 0.2]})
    # A = {0, 1} with k=1, lam=1: 0.3 < 0.5
    assert np.allclose(modified_target_lantern(P, (), 0, 1, 1.0, emb), [0.8, 0.0, 0.2], atol=1e-15)
    assert np.array_equal(modified_target_lantern(P, (), 0, 1, 0.0, emb), P.row(()))


@given(st.integers(3, 7), st.integers(1, 6), st.floats(0.0, 4.0), st.integers(0, 10**6))
def test_modified_target_conserves_mass(V, k, lam, seed):
    assume(k < V)
    emb = random_embeddings(V, 4, seed)
    P = np.random.default_rng(seed).dirichlet(np.ones(V))
    for a in range(V):
        row = lantern_row(P, a, k, lam, emb)
        assert abs(math.fsum(row) - 1.0) <= 1e-12
        assert np.all(row >= 0)


def test_lantern_acceptance_examples():
    emb = line_embeddings(3)
    P, Q = one_row([0.5, 0.3, 0.2], [0.5, 0.1, 0.4])
    assert accept_prob_lantern(P, Q, (), 0, 1, 1.0, emb) == 1.0  # 0.8 / 0.5
    P, Q = one_row([0.2, 0.7, 0.1], [0.5, 0.3, 0.2])
    # anchor 0 cannot absorb 0.7; aggregated mass stays 0.2
    assert accept_prob_lantern(P, Q, (), 0, 1, 1.0, emb) == pytest.approx(0.4, abs=1e-15)


@given(st.integers(3, 6), st.integers(0, 10**6))
def test_lantern_zero_budget_is_vanilla(V, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 3)
    emb = random_embeddings(V, 4, seed)
    for p in P.prefixes():
        for x in range(V):
            assert accept_prob_lantern(P, Q, p, x, 2, 0.0, emb) == accept_prob_vanilla(P, Q, p, x)


@given(st.integers(3, 6), st.integers(1, 2), st.floats(0.0, 3.0), st.integers(0, 10**6))
def test_lantern_dominates_vanilla(V, k, lam, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 3)
    rule = LanternPP(k, lam, random_embeddings(V, 4, seed))
    for p in P.prefixes():
        assert np.all(rule.row(P, Q, p, 1) >= Vanilla().row(P, Q, p, 1))


# -- resampling ----------------------------------------------------------------

def test_vanilla_residual_examples():
    P, Q = one_row([0.7, 0.3], [0.3, 0.7])
    assert np.allclose(resample_dist_vanilla(P, Q, ()), [1.0, 0.0], atol=1e-15)
    P, Q = one_row([0.5, 0.3, 0.2], [0.1, 0.5, 0.4])
    assert np.allclose(resample_dist_vanilla(P, Q, ()), [1.0, 0.0, 0.0], atol=1e-15)
    with pytest.raises(DegenerateResidual):
        resample_dist_vanilla(P, P, ())


def test_gstar_examples():
    P, Q = one_row([0.6, 0.4], [0.2, 0.8])
    assert np.allclose(resample_dist_gstar(P, Q, (), [1.0, 1.0]), [1.0, 0.0], atol=1e-15)
    f_van = Vanilla().row(P, Q, (), 1)
    assert np.allclose(resample_dist_gstar(P, Q, (), f_van), resample_dist_vanilla(P, Q, ()), atol=1e-15)
    # f >= P/Q everywhere leaves no residual: fall back to the target row
    P, Q = one_row([0.5, 0.5], [0.5, 0.5])
    assert np.array_equal(resample_dist_gstar(P, Q, (), [1.0, 1.0]), P.row(()))
    with pytest.raises(ValueError):
        resample_dist_gstar(P, Q, (), [1.0])


def test_lantern_residual_examples():
    emb = line_embeddings(3)
    P, Q = one_row([0.5, 0.3, 0.2], [0.4, 0.4, 0.2])
    # anchor 0 with k=1, lam=1 gives the modified target [0.8, 0, 0.2]
    assert np.allclose(resample_dist_lantern(P, Q, (), 0, 1, 1.0, emb), [1.0, 0.0, 0.0], atol=1e-15)
    assert np.allclose(resample_dist_lantern(P, Q, (), 0, 1, 0.0, emb), resample_dist_vanilla(P, Q, ()), atol=1e-15)
    # zero residual falls back to the modified row
    P2, Q2 = one_row([0.5, 0.3, 0.2], [0.8, 0.0, 0.2])
    assert np.allclose(resample_dist_lantern(P2, Q2, (), 0, 1, 1.0, emb), [0.8, 0.0, 0.2], atol=1e-15)


@given(st.integers(2, 5), st.floats(1.0, 6.0), st.integers(0, 10**6))
def test_gstar_equals_vanilla_under_dominance(V, omega, seed):
    P, Q = random_model(V, 2, seed=seed), random_model(V, 2, seed=seed + 11)
    for p in P.prefixes():
        f = MultiplicativeRelax(uniform_schedule(omega, 1)).row(P, Q, p, 1)
        g = resample_dist_gstar(P, Q, p, f)
        assert np.max(np.abs(g - resample_dist_vanilla(P, Q, p))) <= 1e-12


@given(st.integers(2, 6), st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_resampling_rows_are_distributions(V, seed, t):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(V)), rng.dirichlet(np.ones(V))
    f = t * np.ones(V)
    for g in (gstar_row(p, q, f),):
        assert np.all(g >= 0) and abs(math.fsum(g) - 1.0) <= 1e-12
    emb = random_embeddings(V, 3, seed)
    P, Q = one_row(p, q)
    for a in range(V):
        g = resample_dist_lantern(P, Q, (), a, 1, 2.0, emb)
        assert np.all(g >= 0) and abs(math.fsum(g) - 1.0) <= 1e-12


@given(st.integers(2, 4), st.integers(0, 10**6))
def test_rejection_mass_matches_definition(V, seed):
    P, Q = random_model(V, 1, seed=seed), random_model(V, 1, seed=seed + 1)
    emb = random_embeddings(V, 3, seed)
    acc = LanternPP(1, 1.5, emb)
    f = acc.row(P, Q, (), 1)
    res = LanternResidual(1, 1.5, emb)
    q = Q.row(())
    ref = sum(q[y] * (1 - f[y]) * res.dist(P, Q, (), f, y) for y in range(V))
    assert np.allclose(res.rejection_mass(P, Q, (), f), ref, atol=1e-15)
    # unanchored rules: G * total rejection probability
    r = math.fsum(q * (1 - f))
    assert np.allclose(OptimalGStar().rejection_mass(P, Q, (), f), gstar_row(P.row(()), q, f) * r, atol=1e-15)


def test_test_hooks():
    P, Q = random_model(3, 2, seed=0), random_model(3, 2, seed=1)
    assert np.array_equal(ConstantAcceptance(0.0).row(P, Q, (), 1), np.zeros(3))
    shifted = ShiftedAcceptance(Vanilla(), (0.5, -0.5)).row(P, Q, (), 1)
    assert np.allclose(shifted, Vanilla().row(P, Q, (), 1) + 0.5)
    assert np.any(shifted > 1.0)  # never clamped
    assert VanillaResidual.anchored is False and LanternResidual.anchored is True
