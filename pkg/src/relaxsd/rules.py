"""Acceptance probabilities and resampling distributions for relaxed SD.

Row-level helpers work on plain probability vectors; the rule classes bind
them to models and draft positions. An acceptance rule returns, for a context
and a draft position, the acceptance probability of every candidate token.
A resampling rule returns the correction distribution used after a
rejection, given that acceptance row and the rejected draft token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateResidual
from .models import ArModel, TokenEmbedding
from .schedules import Schedule


def safe_ratio(num, den):
    """Elementwise ``num / den`` with ``0/0 = 1`` and ``x/0 = inf`` for ``x > 0``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out = np.where(den == 0.0, np.where(num == 0.0, 1.0, np.inf), out)
    return out if out.ndim else float(out)


def vanilla_accept_row(p_row: np.ndarray, q_row: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, safe_ratio(p_row, q_row))


def relaxed_accept_row(p_row: np.ndarray, q_row: np.ndarray, omega: float) -> np.ndarray:
    return np.minimum(1.0, omega * safe_ratio(p_row, q_row))


def normalized_positive_part(v: np.ndarray) -> np.ndarray | None:
    """``Norm([v]_+)``, or ``None`` when the positive part is identically zero."""
    pos = np.maximum(np.asarray(v, dtype=float), 0.0)
    total = math.fsum(pos)
    if total <= 0.0:
        return None
    return pos / total


# -- LANTERN++ aggregation ---------------------------------------------------

def neighbor_order(embeddings: TokenEmbedding, anchor: int) -> list[int]:
    """Non-anchor tokens by increasing Euclidean distance, ties to the lower id."""
    vec = embeddings.vectors
    dist = np.sqrt(((vec - vec[anchor]) ** 2).sum(axis=1))
    return sorted((t for t in range(len(vec)) if t != anchor), key=lambda t: (dist[t], t))


def knn_aggregate_set(embeddings: TokenEmbedding, P_row: Sequence[float], anchor: int, k: int, lam: float) -> frozenset[int]:
    """Anchor plus the near neighbours whose mass may be folded into it.

    Among the ``k`` nearest neighbours, nearest first, a token is admitted
    when the admitted non-anchor mass stays strictly below ``lam * P[anchor]``.
    Neighbours that do not fit are skipped, later ones may still be admitted.
    """
    if not 1 <= k < embeddings.vocab_size:
        raise ValueError(f"k must satisfy 1 <= k < vocab_size, got k={k}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    budget = lam * P_row[anchor]
    chosen = {anchor}
    mass = 0.0
    for tok in neighbor_order(embeddings, anchor)[:k]:
        if mass + P_row[tok] < budget:
            chosen.add(tok)
            mass += P_row[tok]
    return frozenset(chosen)


def lantern_row(p_row: np.ndarray, anchor: int, k: int, lam: float, embeddings: TokenEmbedding) -> np.ndarray:
    """Target row with the aggregated neighbour mass moved onto ``anchor``."""
    members = knn_aggregate_set(embeddings, p_row, anchor, k, lam)
    out = np.array(p_row, dtype=float)
    out[anchor] = math.fsum(p_row[t] for t in members)
    for t in members:
        if t != anchor:
            out[t] = 0.0
    return out


def lantern_accept_row(p_row, q_row, k, lam, embeddings) -> np.ndarray:
    agg = np.array([lantern_row(p_row, x, k, lam, embeddings)[x] for x in range(len(p_row))])
    return np.minimum(1.0, safe_ratio(agg, q_row))


# -- scalar operations on models --------------------------------------------

def accept_prob_vanilla(P: ArModel, Q: ArModel, prefix, token: int) -> float:
    return float(vanilla_accept_row(P.row(prefix), Q.row(prefix))[token])


def accept_prob_relaxed(P: ArModel, Q: ArModel, prefix, token: int, omega: float) -> float:
    if not omega > 0:
        raise ValueError("omega must be positive")
    return float(relaxed_accept_row(P.row(prefix), Q.row(prefix), omega)[token])


def modified_target_lantern(P: ArModel, prefix, anchor: int, k: int, lam: float, embeddings: TokenEmbedding) -> np.ndarray:
    return lantern_row(P.row(prefix), anchor, k, lam, embeddings)


def accept_prob_lantern(P: ArModel, Q: ArModel, prefix, token: int, k: int, lam: float, embeddings: TokenEmbedding) -> float:
    agg = lantern_row(P.row(prefix), token, k, lam, embeddings)[token]
    return float(min(1.0, safe_ratio(agg, Q.row(prefix)[token])))


def resample_dist_vanilla(P: ArModel, Q: ArModel, prefix) -> np.ndarray:
    out = normalized_positive_part(P.row(prefix) - Q.row(prefix))
    if out is None:
        raise DegenerateResidual(f"P and Q coincide at prefix {tuple(prefix)}")
    return out


def gstar_row(p_row: np.ndarray, q_row: np.ndarray, f_row: np.ndarray) -> np.ndarray:
    out = normalized_positive_part(p_row - q_row * f_row)
    # zero residual => rejection mass is zero too, every G is optimal; keep the target row
    return np.array(p_row, dtype=float) if out is None else out


def resample_dist_gstar(P: ArModel, Q: ArModel, prefix, f_row) -> np.ndarray:
    f_row = np.asarray(f_row, dtype=float)
    if f_row.shape != (P.vocab_size,):
        raise ValueError("f_row must have one entry per token")
    return gstar_row(P.row(prefix), Q.row(prefix), f_row)


def resample_dist_lantern(P: ArModel, Q: ArModel, prefix, anchor: int, k: int, lam: float, embeddings: TokenEmbedding) -> np.ndarray:
    """Residual of the anchor-modified target against the draft.

    ``anchor`` is the rejected draft token; the modified target is built
    around it, so the correction distribution depends on which draft failed.
    """
    mod = lantern_row(P.row(prefix), anchor, k, lam, embeddings)
    out = normalized_positive_part(mod - Q.row(prefix))
    return mod if out is None else out


# -- rule objects --------------------------------------------------------------

class AcceptanceRule:
    """Family of acceptance functions indexed by draft position (1-based)."""

    def row(self, P: ArModel, Q: ArModel, prefix, position: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Vanilla(AcceptanceRule):
    def row(self, P, Q, prefix, position):
        return vanilla_accept_row(P.row(prefix), Q.row(prefix))


@dataclass(frozen=True)
class MultiplicativeRelax(AcceptanceRule):
    schedule: Schedule

    def row(self, P, Q, prefix, position):
        if not 1 <= position <= self.schedule.L:
            raise ValueError(f"position {position} outside schedule of length {self.schedule.L}")
        return relaxed_accept_row(P.row(prefix), Q.row(prefix), self.schedule[position - 1])


@dataclass(frozen=True, eq=False)
class LanternPP(AcceptanceRule):
    k: int
    lam: float
    embeddings: TokenEmbedding

    def row(self, P, Q, prefix, position):
        return lantern_accept_row(P.row(prefix), Q.row(prefix), self.k, self.lam, self.embeddings)


@dataclass(frozen=True)
class ConstantAcceptance(AcceptanceRule):
    """Accept every draft with the same probability (test hook)."""

    value: float

    def row(self, P, Q, prefix, position):
        return np.full(P.vocab_size, float(self.value))


@dataclass(frozen=True, eq=False)
class ShiftedAcceptance(AcceptanceRule):
    """Additive perturbation ``f_i + shifts[i-1]`` of a base rule, never clamped."""

    base: AcceptanceRule
    shifts: tuple[float, ...]

    def row(self, P, Q, prefix, position):
        return self.base.row(P, Q, prefix, position) + self.shifts[position - 1]


class ResamplingRule:
    """Correction distribution drawn from at the first rejected position."""

    #: whether the distribution depends on the rejected draft token
    anchored = False

    def dist(self, P: ArModel, Q: ArModel, prefix, f_row: np.ndarray, rejected: int) -> np.ndarray:
        raise NotImplementedError

    def rejection_mass(self, P: ArModel, Q: ArModel, prefix, f_row: np.ndarray) -> np.ndarray:
        """``R(x) = sum_y Q(y) (1 - f(y)) G^y(x)``: total mass routed to ``x`` by rejections."""
        q_row = Q.row(prefix)
        reject = q_row * (1.0 - f_row)
        if not self.anchored:
            r = math.fsum(reject)
            if r == 0.0:
                return np.zeros(P.vocab_size)
            return self.dist(P, Q, prefix, f_row, -1) * r
        out = np.zeros(P.vocab_size)
        for y in range(P.vocab_size):
            if reject[y] != 0.0:
                out += reject[y] * self.dist(P, Q, prefix, f_row, y)
        return out


@dataclass(frozen=True)
class VanillaResidual(ResamplingRule):
    def dist(self, P, Q, prefix, f_row, rejected):
        return resample_dist_vanilla(P, Q, prefix)


@dataclass(frozen=True)
class OptimalGStar(ResamplingRule):
    def dist(self, P, Q, prefix, f_row, rejected):
        return gstar_row(P.row(prefix), Q.row(prefix), np.asarray(f_row, dtype=float))


@dataclass(frozen=True, eq=False)
class LanternResidual(ResamplingRule):
    k: int
    lam: float
    embeddings: TokenEmbedding
    anchored = True

    def dist(self, P, Q, prefix, f_row, rejected):
        return resample_dist_lantern(P, Q, prefix, rejected, self.k, self.lam, self.embeddings)
