"""Runtime for one speculative round and seeded Monte Carlo over many rounds.

Randomness is consumed in a fixed order within a round: ``L`` uniforms for
drafting (inverse CDF), one uniform per verified position up to and including
the first rejection, then one uniform for the correction or bonus token.
:func:`simulate` additionally draws the virtual-extension tokens from the same
per-round stream afterwards.

In :func:`simulate` every round reads its own row of uniforms. Row ``r`` comes
from block ``r // BLOCK`` seeded with ``(seed, r // BLOCK)``, so results do
not depend on how rounds are spread over threads.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DepthExceeded, VocabMismatch
from .models import ArModel, Prefix, inverse_cdf
from .rules import AcceptanceRule, ResamplingRule

BLOCK = 4096


@dataclass(frozen=True)
class SdConfig:
    L: int
    acceptance: AcceptanceRule
    resampling: ResamplingRule
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("draft length L must be at least 1")


@dataclass(frozen=True)
class RoundOutcome:
    tau: int
    tokens: tuple[int, ...]
    bonus_used: bool
    rejected_at: int | None = None  # 1-based draft position


class UniformStream:
    """Hands out a fixed sequence of uniforms through a ``Generator``-like ``random()``."""

    def __init__(self, values: Sequence[float]):
        self._values = values
        self._pos = 0

    def random(self) -> float:
        u = self._values[self._pos]
        self._pos += 1
        return u

    @property
    def consumed(self) -> int:
        return self._pos


class RoundKernel:
    """Memoised model rows, acceptance rows and correction rows for one context."""

    def __init__(self, P: ArModel, Q: ArModel, cfg: SdConfig, L: int | None = None):
        if P.vocab_size != Q.vocab_size:
            raise VocabMismatch("P and Q have different vocabularies")
        self.P, self.Q, self.cfg = P, Q, cfg
        self.L = cfg.L if L is None else L
        self._f: dict = {}
        self._g: dict = {}

    def accept_row(self, ctx: Prefix, position: int) -> np.ndarray:
        key = (ctx, position)
        if key not in self._f:
            self._f[key] = np.asarray(self.cfg.acceptance.row(self.P, self.Q, ctx, position), dtype=float)
        return self._f[key]

    def correction(self, ctx: Prefix, position: int, rejected: int) -> np.ndarray:
        anchored = self.cfg.resampling.anchored
        key = (ctx, position, rejected if anchored else None)
        if key not in self._g:
            f = self.accept_row(ctx, position)
            self._g[key] = self.cfg.resampling.dist(self.P, self.Q, ctx, f, rejected)
        return self._g[key]

    def draft(self, prefix: Prefix, rng) -> Prefix:
        return draft(self.Q, self.L, rng, prefix)

    def verify(self, prefix: Prefix, drafts: Prefix, rng) -> RoundOutcome:
        if len(drafts) != self.L:
            raise ValueError(f"expected {self.L} drafts, got {len(drafts)}")
        if len(prefix) + self.L + 1 > self.P.depth:
            raise DepthExceeded(f"round after {len(prefix)} tokens needs target depth {len(prefix) + self.L + 1}")
        accepted: Prefix = ()
        for i, tok in enumerate(drafts, start=1):
            ctx = prefix + accepted
            f = self.accept_row(ctx, i)
            # strict: f = 0 never accepts, f = 1 always does (u < 1)
            if rng.random() < f[tok]:
                accepted = accepted + (tok,)
                continue
            g = self.correction(ctx, i, tok)
            fix = inverse_cdf(g, rng.random())
            return RoundOutcome(i - 1, accepted + (fix,), False, i)
        bonus = inverse_cdf(self.P.row(prefix + accepted), rng.random())
        return RoundOutcome(self.L, accepted + (bonus,), True, None)

    def round(self, prefix: Prefix, rng) -> RoundOutcome:
        return self.verify(prefix, self.draft(prefix, rng), rng)


def draft(Q: ArModel, L: int, rng, prefix: Sequence[int] = ()) -> tuple[int, ...]:
    """``L`` autoregressive draft tokens after ``prefix``."""
    prefix = tuple(prefix)
    if len(prefix) + L > Q.depth:
        raise DepthExceeded(f"drafting {L} tokens needs draft depth {len(prefix) + L}")
    out = prefix
    for _ in range(L):
        out = out + (inverse_cdf(Q.row(out), rng.random()),)
    return out[len(prefix):]


def verify(P: ArModel, Q: ArModel, drafts: Sequence[int], cfg: SdConfig, rng, prefix: Sequence[int] = ()) -> RoundOutcome:
    """Accept drafts left to right; correct the first rejection or add the bonus token."""
    return RoundKernel(P, Q, cfg).verify(tuple(prefix), tuple(drafts), rng)


@dataclass
class SimulationResult:
    n_rounds: int
    mean_accepted_len: float
    stderr: float
    empirical_dist: dict[tuple[int, ...], float]
    per_position_accept_rate: list[float]
    outcomes: list[RoundOutcome] = field(default_factory=list, repr=False)


def round_uniforms(seed: int, start: int, stop: int, width: int) -> np.ndarray:
    """Uniform rows for rounds ``start..stop-1``; row ``r`` depends only on ``(seed, r)``."""
    rows = []
    for blk in range(start // BLOCK, (stop - 1) // BLOCK + 1):
        block = np.random.default_rng([seed, blk]).random((BLOCK, width))
        lo = max(start, blk * BLOCK) - blk * BLOCK
        hi = min(stop, (blk + 1) * BLOCK) - blk * BLOCK
        rows.append(block[lo:hi])
    return np.vstack(rows)


def _run_rounds(kernel: RoundKernel, seed: int, start: int, stop: int, width: int):
    P, L = kernel.P, kernel.L
    out = []
    for row in round_uniforms(seed, start, stop, width).tolist():
        stream = UniformStream(row)
        res = kernel.round((), stream)
        seq = res.tokens
        while len(seq) < L + 1:  # virtual extension from the target
            seq = seq + (inverse_cdf(P.row(seq), stream.random()),)
        out.append((res, seq))
    return out


def simulate(P: ArModel, Q: ArModel, cfg: SdConfig, n_rounds: int, *, threads: int = 1, keep_outcomes: bool = False) -> SimulationResult:
    """Run ``n_rounds`` independent rounds from the empty prefix."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    L = cfg.L
    if L + 1 > P.depth or L > Q.depth:
        raise DepthExceeded(f"L={L} needs target depth {L + 1}")
    kernel = RoundKernel(P, Q, cfg)
    width = 3 * L + 1
    # chunk boundaries are fixed, so the thread count only changes scheduling
    bounds = [(a, min(a + BLOCK, n_rounds)) for a in range(0, n_rounds, BLOCK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda b: _run_rounds(kernel, cfg.seed, b[0], b[1], width), bounds))
    else:
        chunks = [_run_rounds(kernel, cfg.seed, a, b, width) for a, b in bounds]
    results = [r for chunk in chunks for r in chunk]

    lengths = np.array([res.tau + 1 for res, _ in results], dtype=float)
    mean = float(lengths.mean())
    stderr = float(lengths.std(ddof=1) / math.sqrt(n_rounds)) if n_rounds > 1 else 0.0
    counts = Counter(seq for _, seq in results)
    empirical = {seq: c / n_rounds for seq, c in sorted(counts.items())}
    taus = np.array([res.tau for res, _ in results])
    rates = []
    for i in range(1, L + 1):
        reached = int(np.sum(taus >= i - 1))
        rates.append(float(np.sum(taus >= i)) / reached if reached else float("nan"))
    return SimulationResult(
        n_rounds, mean, stderr, empirical, rates,
        [res for res, _ in results] if keep_outcomes else [],
    )


def generate_sequence(P: ArModel, Q: ArModel, cfg: SdConfig, total_len: int, rng=None) -> tuple[int, ...]:
    """Chain rounds until ``total_len`` tokens are emitted.

    Each round is conditioned on everything emitted so far. Near the end the
    draft length shrinks so the round never reaches past ``total_len``.
    """
    if total_len > P.depth:
        raise DepthExceeded(f"total_len {total_len} exceeds target depth {P.depth}")
    if total_len > 0 and total_len - 1 > Q.depth:
        raise DepthExceeded(f"total_len {total_len} exceeds draft depth {Q.depth}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    out: tuple[int, ...] = ()
    kernels: dict[int, RoundKernel] = {}
    while len(out) < total_len:
        L = min(cfg.L, total_len - len(out) - 1)
        if L == 0:
            out = out + (inverse_cdf(P.row(out), rng.random()),)
            continue
        kernel = kernels.setdefault(L, RoundKernel(P, Q, cfg, L))
        out = out + kernel.round(out, rng).tokens
    return out[:total_len]
