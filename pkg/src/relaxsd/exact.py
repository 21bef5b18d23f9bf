"""Exact enumeration of relaxed speculative decoding at desk scale.

Everything here is computed by summing over the full prefix tree, so
``V ** (L + 1)`` must stay small (the intended range is ``V <= 8``,
``L <= 4``). Sums are accumulated with :func:`math.fsum`.

The output distribution of one round (after extending short rounds with
target samples up to ``L + 1`` tokens) is produced by three independent
routes: a walk over every draft/accept/reject/continuation path, the
explicit closed form, and the one-step recursion. They are each other's
oracles.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    ClampViolation,
    DegenerateResidual,
    DepthExceeded,
    DomainMismatch,
    DominanceViolated,
    ExpectationMismatch,
    PremiseViolated,
    VocabTooLarge,
)
from .models import ArModel, Prefix, all_prefixes, check_closeness, joint_probs
from .rules import (
    AcceptanceRule,
    MultiplicativeRelax,
    OptimalGStar,
    ResamplingRule,
    ShiftedAcceptance,
    gstar_row,
    normalized_positive_part,
    vanilla_accept_row,
)
from .schedules import Schedule

DIST_TOL = 1e-10
ROW_BOUNDS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ExactDist:
    """Probability mass over every sequence of a fixed length."""

    length: int
    vocab: int
    probs: np.ndarray  # shape (vocab,) * length

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.shape != (self.vocab,) * self.length:
            raise DomainMismatch(f"probability array has shape {arr.shape}")
        object.__setattr__(self, "probs", arr)

    def prob(self, seq) -> float:
        return float(self.probs[tuple(seq)])

    def items(self):
        for seq in all_prefixes(self.vocab, self.length):
            yield seq, float(self.probs[seq])

    def total(self) -> float:
        return math.fsum(self.probs.ravel())

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "vocab": self.vocab,
            "probs": {",".join(map(str, s)): p for s, p in self.items()},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExactDist":
        n, V = int(doc["length"]), int(doc["vocab"])
        arr = np.zeros((V,) * n)
        seen = 0
        for key, p in doc["probs"].items():
            seq = tuple(int(t) for t in key.split(",")) if key else ()
            arr[seq] = float(p)
            seen += 1
        if seen != V ** n:
            raise DomainMismatch(f"expected {V ** n} sequences, got {seen}")
        return cls(n, V, arr)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ExactDist":
        return cls.from_dict(json.loads(text))


def target_dist(P: ArModel, length: int) -> ExactDist:
    return ExactDist(length, P.vocab_size, joint_probs(P, length))


def tv_exact(a: ExactDist, b: ExactDist) -> float:
    if a.length != b.length or a.vocab != b.vocab:
        raise DomainMismatch("distributions live on different sequence spaces")
    return 0.5 * math.fsum(np.abs(a.probs - b.probs).ravel())


# -- per-prefix quantities of one round --------------------------------------

def _check_depth(P: ArModel, Q: ArModel, L: int, need: int) -> None:
    """Drafting needs ``Q.depth >= L``; the target needs ``P.depth >= need``."""
    if L < 1:
        raise ValueError("draft length L must be at least 1")
    if P.vocab_size != Q.vocab_size:
        raise DomainMismatch("P and Q have different vocabularies")
    if P.depth < need or Q.depth < L:
        raise DepthExceeded(f"L={L} needs target depth >= {need} and draft depth >= {L}")


@dataclass
class RoundTables:
    """Acceptance rows, path weights and rejection mass for every draft prefix.

    ``weight[s]`` is ``Q(s) * prod_k f_k(s_{1:k})``: the probability that the
    drafts equal ``s`` and all of them were accepted.
    ``reject_mass[s][x]`` is the probability, given ``s`` was accepted, that
    the next draft is rejected and ``x`` is emitted in its place.
    """

    L: int
    f: dict = field(default_factory=dict)
    weight: dict = field(default_factory=dict)
    reject_mass: dict = field(default_factory=dict)


def round_tables(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, resampling: ResamplingRule | None, L: int) -> RoundTables:
    V = P.vocab_size
    t = RoundTables(L)
    t.weight[()] = 1.0
    for n in range(L):
        for s in all_prefixes(V, n):
            f = np.asarray(acceptance.row(P, Q, s, n + 1), dtype=float)
            t.f[s] = f
            q = Q.row(s)
            for x in range(V):
                t.weight[s + (x,)] = t.weight[s] * q[x] * f[x]
            if resampling is not None:
                t.reject_mass[s] = resampling.rejection_mass(P, Q, s, f)
    return t


def _require_probability_rows(t: RoundTables) -> None:
    for s, f in t.f.items():
        if np.any(f < -ROW_BOUNDS_TOL) or np.any(f > 1 + ROW_BOUNDS_TOL):
            raise ValueError(f"acceptance row at prefix {s} leaves [0, 1]: {f}")


# -- three routes to the output distribution ----------------------------------

def path_enumeration_dist(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, resampling: ResamplingRule, L: int) -> ExactDist:
    """Walk every draft / accept / reject / resample / continuation path."""
    _check_depth(P, Q, L, L + 1)
    V, n = P.vocab_size, L + 1
    terms: dict[Prefix, list[float]] = defaultdict(list)

    def extend(seq: Prefix, w: float) -> None:
        if len(seq) == n:
            terms[seq].append(w)
            return
        row = P.row(seq)
        for x in range(V):
            if row[x] > 0.0:
                extend(seq + (x,), w * row[x])

    def walk(s: Prefix, w: float) -> None:
        if len(s) == L:
            extend(s, w)  # bonus token from the target
            return
        f = np.asarray(acceptance.row(P, Q, s, len(s) + 1), dtype=float)
        if np.any(f < -ROW_BOUNDS_TOL) or np.any(f > 1 + ROW_BOUNDS_TOL):
            raise ValueError(f"acceptance row at prefix {s} leaves [0, 1]: {f}")
        q = Q.row(s)
        for y in range(V):
            if q[y] == 0.0:
                continue
            if f[y] > 0.0:
                walk(s + (y,), w * q[y] * f[y])
            rej = w * q[y] * (1.0 - f[y])
            if rej > 0.0:
                g = resampling.dist(P, Q, s, f, y)
                for x in range(V):
                    if g[x] > 0.0:
                        extend(s + (x,), rej * g[x])

    walk((), 1.0)
    arr = np.zeros((V,) * n)
    for seq, ws in terms.items():
        arr[seq] = math.fsum(ws)
    return ExactDist(n, V, arr)


def closed_form_dist(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, resampling: ResamplingRule, L: int) -> ExactDist:
    """Explicit expression: target continuation of every per-position correction term.

    For ``x`` of length ``L``::

        Phat(x) = Phat(x_1) P(x_{2:L} | x_1)
                + sum_{j=1}^{L-1} P(x_{j+2:L} | x_{1:j+1}) W(x_{1:j})
                  * [Q(x_{j+1}|x_{1:j}) f_{j+1} - P(x_{j+1}|x_{1:j}) + R_{j+1}(x_{j+1}|x_{1:j})]

    with ``Phat(x_1) = Q(x_1) f_1(x_1) + R_1(x_1)``, then one more target step
    to reach length ``L + 1``.
    """
    _check_depth(P, Q, L, L + 1)
    t = round_tables(P, Q, acceptance, resampling, L)
    _require_probability_rows(t)
    V = P.vocab_size

    def tail(seq: Prefix, start: int) -> float:
        # P(seq[start:] | seq[:start])
        prob = 1.0
        for m in range(start, len(seq)):
            prob *= P.tables[seq[:m]][seq[m]]
        return prob

    arr = np.zeros((V,) * (L + 1))
    for x in all_prefixes(V, L):
        first = Q.row(())[x[0]] * t.f[()][x[0]] + t.reject_mass[()][x[0]]
        parts = [first * tail(x, 1)]
        for j in range(1, L):
            s = x[:j]
            y = x[j]
            bracket = Q.row(s)[y] * t.f[s][y] - P.row(s)[y] + t.reject_mass[s][y]
            parts.append(tail(x, j + 1) * t.weight[s] * bracket)
        phat_L = math.fsum(parts)
        arr[x] = phat_L * P.row(x)
    return ExactDist(L + 1, V, arr)


def recursive_dist(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, resampling: ResamplingRule, L: int) -> ExactDist:
    """One-step recursion ``Phat(s+x) = Phat(s) P(x|s) + W(s) [Q f - P + R](x|s)``."""
    _check_depth(P, Q, L, L + 1)
    t = round_tables(P, Q, acceptance, resampling, L)
    _require_probability_rows(t)
    V = P.vocab_size
    cur = {(): 1.0}
    for n in range(L):
        nxt = {}
        for s, ps in cur.items():
            corr = Q.row(s) * t.f[s] - P.row(s) + t.reject_mass[s]
            prow = P.row(s)
            w = t.weight[s]
            for x in range(V):
                nxt[s + (x,)] = math.fsum((ps * prow[x], w * corr[x]))
        cur = nxt
    arr = np.zeros((V,) * (L + 1))
    for s, ps in cur.items():
        arr[s] = ps * P.row(s)
    return ExactDist(L + 1, V, arr)


def _acc_res(cfg_or_acc, resampling, L):
    if resampling is None and hasattr(cfg_or_acc, "acceptance"):
        return cfg_or_acc.acceptance, cfg_or_acc.resampling, cfg_or_acc.L
    return cfg_or_acc, resampling, L


def exact_output_dist(P: ArModel, Q: ArModel, cfg, resampling: ResamplingRule | None = None, L: int | None = None, *, cross_check: bool = True) -> ExactDist:
    """Exact distribution of a virtually extended round over ``X^(L+1)``.

    Accepts either an object with ``acceptance``/``resampling``/``L``
    attributes (an ``SdConfig``) or the three pieces separately. The path
    walk is returned; with ``cross_check`` the closed form is computed too and
    the two must agree to ``1e-10``.
    """
    acceptance, resampling, L = _acc_res(cfg, resampling, L)
    walked = path_enumeration_dist(P, Q, acceptance, resampling, L)
    if cross_check:
        closed = closed_form_dist(P, Q, acceptance, resampling, L)
        gap = float(np.max(np.abs(walked.probs - closed.probs)))
        if gap > DIST_TOL:
            raise ArithmeticError(f"path enumeration and closed form disagree by {gap:.3e}")
    return walked


# -- expected length and the TV bound --------------------------------------------

def exact_expected_accepted(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, L: int) -> float:
    """``E[tau + 1] = 1 + sum_i sum_{x_{1:i}} Q(x_{1:i}) prod_j f_j``."""
    _check_depth(P, Q, L, L)
    t = round_tables(P, Q, acceptance, None, L)
    return math.fsum([1.0] + [w for s, w in t.weight.items() if s])


def tvb_upper_bound(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, resampling: ResamplingRule, L: int) -> float:
    """Upper bound on ``TV(Phat, P)`` summed over positions and accepted prefixes."""
    _check_depth(P, Q, L, L)
    t = round_tables(P, Q, acceptance, resampling, L)
    terms = []
    for s, f in t.f.items():
        w = t.weight[s]
        if w == 0.0:
            continue
        inner = Q.row(s) * f - P.row(s) + t.reject_mass[s]
        terms.append(w * math.fsum(np.abs(inner)))
    return 0.5 * math.fsum(terms)


def lp_premise_holds(p_row, q_row, f_row, tol: float = ROW_BOUNDS_TOL) -> bool:
    """``1 >= f >= min{1, P/Q}`` entrywise."""
    f = np.asarray(f_row)
    return bool(np.all(f <= 1 + tol) and np.all(f >= vanilla_accept_row(p_row, q_row) - tol))


def tvb_gstar_reduced(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, L: int) -> float:
    """The bound after substituting the optimal resampling distribution.

    Each position contributes ``W(s) * [sum|P - Q f| - sum (1 - f) Q]``.
    Raises :class:`PremiseViolated` when some acceptance row is outside
    ``[min{1, P/Q}, 1]``.
    """
    _check_depth(P, Q, L, L)
    t = round_tables(P, Q, acceptance, None, L)
    terms = []
    for s, f in t.f.items():
        p, q = P.row(s), Q.row(s)
        if not lp_premise_holds(p, q, f):
            raise PremiseViolated(f"acceptance row at prefix {s} is outside [min(1, P/Q), 1]")
        w = t.weight[s]
        if w == 0.0:
            continue
        bracket = math.fsum(np.abs(p - q * f)) - math.fsum(q * (1.0 - f))
        terms.append(w * bracket)
    return 0.5 * math.fsum(terms)


# -- optimal resampling: linear-program oracle --------------------------------

def lp_objective(p_row, q_row, f_row, g) -> np.ndarray | float:
    """``sum_x |P - Q f - G r|`` with ``r = sum (1 - f) Q``; ``g`` may be a batch."""
    p, q, f = (np.asarray(a, dtype=float) for a in (p_row, q_row, f_row))
    r = math.fsum(q * (1.0 - f))
    g = np.asarray(g, dtype=float)
    return np.abs(p - q * f - g * r).sum(axis=-1)


def lp_analytic(p_row, q_row, f_row) -> tuple[np.ndarray, float, float]:
    """Analytic minimiser with its objective and the closed-form infimum."""
    p, q, f = (np.asarray(a, dtype=float) for a in (p_row, q_row, f_row))
    g = gstar_row(p, q, f)
    obj = math.fsum(np.abs(p - q * f - g * math.fsum(q * (1.0 - f))))
    closed = math.fsum(np.abs(p - q * f)) - math.fsum(q * (1.0 - f))
    return g, obj, closed


def simplex_grid(V: int, m: int) -> np.ndarray:
    """All points of the probability simplex with coordinates in ``{0, 1/m, ..., 1}``."""
    # stars and bars: V - 1 bar positions among m + V - 1 slots
    bars = np.array(list(itertools.combinations(range(m + V - 1), V - 1)), dtype=np.int64).reshape(-1, V - 1)
    n = len(bars)
    edges = np.hstack([np.full((n, 1), -1), bars, np.full((n, 1), m + V - 1)])
    return (np.diff(edges, axis=1) - 1).astype(float) / m


def _refine(p, q, f, g, step: float) -> tuple[np.ndarray, float]:
    best = g.copy()
    best_obj = float(lp_objective(p, q, f, best))
    V = len(best)
    h = step / 2
    while h > 1e-13:
        improved = True
        while improved:
            improved = False
            for i in range(V):
                for j in range(V):
                    if i == j or best[i] <= 0.0:
                        continue
                    move = min(h, best[i])
                    cand = best.copy()
                    cand[i] -= move
                    cand[j] += move
                    obj = float(lp_objective(p, q, f, cand))
                    if obj < best_obj - 1e-16:
                        best, best_obj, improved = cand, obj, True
        h /= 2
    return best, best_obj


def brute_force_optimal_resample(P_row, Q_row, f_row, grid_step: float = 0.005) -> dict:
    """Exhaustive simplex-grid minimum of the resampling objective, locally refined."""
    p, q, f = (np.asarray(a, dtype=float) for a in (P_row, Q_row, f_row))
    V = len(p)
    if V > 4:
        raise VocabTooLarge(f"grid search over a {V - 1}-simplex is too large")
    if grid_step > 0.01:
        raise ValueError("grid_step must be at most 0.01")
    m = int(round(1.0 / grid_step))
    grid = simplex_grid(V, m)
    objs = lp_objective(p, q, f, grid)
    k = int(np.argmin(objs))
    best, best_obj = _refine(p, q, f, grid[k], grid_step)
    return {"best_G": best, "best_objective": best_obj, "grid_objective": float(objs[k])}


# -- dominance and positivity checks ---------------------------------------------

def verify_proposition1(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, prefix, position: int | None = None) -> float:
    """Max entrywise gap between the optimal and the vanilla resampling rows.

    Requires the acceptance row to dominate the vanilla one at ``prefix``.
    """
    prefix = tuple(prefix)
    position = len(prefix) + 1 if position is None else position
    p, q = P.row(prefix), Q.row(prefix)
    f = np.asarray(acceptance.row(P, Q, prefix, position), dtype=float)
    fvan = vanilla_accept_row(p, q)
    if np.any(f < fvan):
        bad = int(np.argmax(fvan - f))
        raise DominanceViolated(f"f[{bad}]={f[bad]!r} < vanilla {fvan[bad]!r} at prefix {prefix}")
    g_van = normalized_positive_part(p - q)
    if g_van is None:
        raise DegenerateResidual(f"P and Q coincide at prefix {prefix}")
    return float(np.max(np.abs(gstar_row(p, q, f) - g_van)))


def _second_position_stats(P, Q, acceptance):
    """Per first token: sum_x2 Q f2, and sum|P - Q f2| - sum Q (1 - f2)."""
    V = P.vocab_size
    ef2, bracket = np.zeros(V), np.zeros(V)
    for x1 in range(V):
        s = (x1,)
        p, q = P.row(s), Q.row(s)
        f2 = np.asarray(acceptance.row(P, Q, s, 2), dtype=float)
        ef2[x1] = math.fsum(q * f2)
        bracket[x1] = math.fsum(np.abs(p - q * f2)) - math.fsum(q * (1.0 - f2))
    return ef2, bracket


def second_position_gap(P: ArModel, Q: ArModel, acceptance: AcceptanceRule) -> float:
    """``E_Q[f_2] - Delta(f_2) - 1/5``; non-negative under the closeness premise."""
    _check_depth(P, Q, 2, 2)
    q1 = Q.row(())
    ef2, bracket = _second_position_stats(P, Q, acceptance)
    return math.fsum(q1 * ef2) - math.fsum(q1 * bracket) - 0.2


def dominates_vanilla(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, L: int) -> bool:
    for n in range(L):
        for s in all_prefixes(P.vocab_size, n):
            f = np.asarray(acceptance.row(P, Q, s, n + 1))
            if np.any(f < vanilla_accept_row(P.row(s), Q.row(s))):
                return False
    return True


@dataclass(frozen=True)
class PerturbationReport:
    c1: float
    c2: float
    tvb: float
    expected_len: float
    assumptions_ok: bool
    assumption1_margin: float
    assumption2_margin: float
    first_margin: float = 0.0
    second_margin: float = 0.0


def assumption_margins(P: ArModel, Q: ArModel, acceptance: AcceptanceRule) -> tuple[float, float]:
    """Signed-mass gaps between the sets where ``P >= Q f`` and where ``P < Q f``.

    Returns ``(|Q(X1+) - Q(X1-)|, max_x1 |Q(X2-|x1) - Q(X2+|x1)|)``; both equal
    1 for the vanilla rule.
    """
    p, q = P.row(()), Q.row(())
    f1 = np.asarray(acceptance.row(P, Q, (), 1))
    plus = p >= q * f1
    m1 = abs(math.fsum(q[plus]) - math.fsum(q[~plus]))
    m2 = 0.0
    for x1 in range(P.vocab_size):
        s = (x1,)
        p, q = P.row(s), Q.row(s)
        f2 = np.asarray(acceptance.row(P, Q, s, 2))
        plus = p >= q * f2
        m2 = max(m2, abs(math.fsum(q[~plus]) - math.fsum(q[plus])))
    return m1, m2


def compensating_c1(P: ArModel, Q: ArModel, acceptance: AcceptanceRule, c2: float) -> float:
    """First-position shift that keeps ``E[tau + 1]`` fixed when position two moves by ``c2``."""
    q1 = Q.row(())
    e_f1 = math.fsum(q1 * np.asarray(acceptance.row(P, Q, (), 1)))
    ef2, _ = _second_position_stats(P, Q, acceptance)
    e_f2 = math.fsum(q1 * ef2)
    return -e_f1 * c2 / (1.0 + e_f2 + c2)


def perturbation_experiment(
    P: ArModel,
    Q: ArModel,
    omegas,
    c2: float,
    *,
    closeness: float = 0.4,
    margin_threshold: float = 0.3,
    allow_overshoot: bool = False,
) -> tuple[PerturbationReport, PerturbationReport]:
    """Shift a two-position multiplicative rule while holding ``E[tau + 1]`` fixed.

    Returns reports for the shift ``c2`` and for ``-c2`` (each with its own
    compensating ``c1``). The bound of each arm uses the optimal resampling
    rows recomputed for the shifted acceptance.

    Shifted acceptance values are never clamped. By default a value leaving
    ``[0, 1]`` raises :class:`ClampViolation`; ``allow_overshoot=True``
    evaluates the bound and the expected length formally instead, which is
    unavoidable when the base rule dominates the vanilla one (it then equals 1
    wherever ``P >= Q``).
    """
    schedule = omegas if isinstance(omegas, Schedule) else Schedule(tuple(omegas))
    if schedule.L != 2:
        raise ValueError("the perturbation experiment is defined for L = 2")
    if abs(c2) > 0.05:
        raise ValueError("|c2| must be at most 0.05")
    _check_depth(P, Q, 2, 2)
    base = MultiplicativeRelax(schedule)
    base_len = exact_expected_accepted(P, Q, base, 2)

    m1, m2 = assumption_margins(P, Q, base)
    _, _, worst_tv = check_closeness(P, Q, closeness)
    a1 = max(m1, m2)
    a2 = closeness - worst_tv
    ok = a1 <= margin_threshold and a2 >= 0.0 and dominates_vanilla(P, Q, base, 2)

    reports = []
    for shift2 in (c2, -c2):
        shift1 = compensating_c1(P, Q, base, shift2)
        rule = ShiftedAcceptance(base, (shift1, shift2))
        if not allow_overshoot:
            for n in range(2):
                for s in all_prefixes(P.vocab_size, n):
                    f = rule.row(P, Q, s, n + 1)
                    if np.any(f < 0.0) or np.any(f > 1.0):
                        raise ClampViolation(f"shifted acceptance leaves [0, 1] at prefix {s}")
        length = exact_expected_accepted(P, Q, rule, 2)
        if abs(length - base_len) > 1e-9:
            raise ExpectationMismatch(f"expected length moved from {base_len!r} to {length!r}")
        tvb = tvb_upper_bound(P, Q, rule, OptimalGStar(), 2)
        reports.append(PerturbationReport(shift1, shift2, tvb, length, ok, a1, a2, m1, m2))
    return reports[0], reports[1]
