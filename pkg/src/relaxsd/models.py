"""Tabular autoregressive models over a small finite vocabulary.

A model stores one next-token distribution for every prefix shorter than its
depth, so every quantity downstream can be computed by exhaustive enumeration.
The same type plays the role of the target ``P`` and the draft ``Q``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DepthExceeded,
    IncompleteTableError,
    NormalizationError,
    VocabMismatch,
)

Prefix = tuple[int, ...]

CONSTRUCTION_TOL = 1e-9
ROW_TOL = 1e-12


def all_prefixes(vocab_size: int, length: int) -> Iterator[Prefix]:
    """Every sequence of exactly ``length`` tokens, in lexicographic order."""
    return itertools.product(range(vocab_size), repeat=length)


def inverse_cdf(row: np.ndarray, u: float) -> int:
    """Index drawn from ``row`` given one uniform ``u`` in [0, 1).

    Zero-probability entries are never returned, including when floating
    round-off leaves the cumulative sum slightly below ``u``.
    """
    acc = 0.0
    last = -1
    for idx, p in enumerate(row):
        if p <= 0.0:
            continue
        acc += p
        last = idx
        if u < acc:
            return idx
    return last


@dataclass(frozen=True, eq=False)
class ArModel:
    vocab_size: int
    depth: int
    tables: Mapping[Prefix, np.ndarray]

    def row(self, prefix: Sequence[int]) -> np.ndarray:
        prefix = tuple(prefix)
        if len(prefix) >= self.depth:
            raise DepthExceeded(
                f"prefix of length {len(prefix)} needs depth > {len(prefix)}, model has {self.depth}"
            )
        return self.tables[prefix]

    def prefixes(self, max_len: int | None = None) -> Iterator[Prefix]:
        """All prefixes with a stored conditional, shortest first."""
        top = self.depth if max_len is None else min(max_len, self.depth)
        for n in range(top):
            yield from all_prefixes(self.vocab_size, n)


def _validated_row(key: Prefix, values, vocab_size: int) -> np.ndarray:
    row = np.asarray(values, dtype=float)
    if row.shape != (vocab_size,):
        raise NormalizationError(f"row for prefix {key} has shape {row.shape}, expected ({vocab_size},)")
    if not np.all(np.isfinite(row)) or np.any(row < 0):
        raise NormalizationError(f"row for prefix {key} has a negative or non-finite entry")
    total = math.fsum(row)
    if abs(total - 1.0) > CONSTRUCTION_TOL:
        raise NormalizationError(f"row for prefix {key} sums to {total!r}")
    row = row / total
    row.setflags(write=False)
    return row


def new_tabular_model(vocab_size: int, depth: int, tables: Mapping[Sequence[int], Sequence[float]]) -> ArModel:
    """Validate a complete prefix table and wrap it as an :class:`ArModel`."""
    if vocab_size < 1 or depth < 1:
        raise ValueError("vocab_size and depth must be positive")
    given = {tuple(int(t) for t in k): v for k, v in tables.items()}
    stored: dict[Prefix, np.ndarray] = {}
    for n in range(depth):
        for prefix in all_prefixes(vocab_size, n):
            if prefix not in given:
                raise IncompleteTableError(f"no conditional for prefix {prefix}")
            stored[prefix] = _validated_row(prefix, given.pop(prefix), vocab_size)
    if given:
        extra = next(iter(given))
        raise IncompleteTableError(f"prefix {extra} is not a valid prefix for V={vocab_size}, D={depth}")
    return ArModel(vocab_size, depth, stored)


def random_model(vocab_size: int, depth: int, concentration: float = 1.0, seed: int = 0) -> ArModel:
    """Draw each conditional from a symmetric Dirichlet via normalized gammas."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    tables = {}
    for n in range(depth):
        for prefix in all_prefixes(vocab_size, n):
            g = rng.gamma(concentration, 1.0, size=vocab_size)
            total = g.sum()
            if total <= 0.0:
                # every gamma underflowed (tiny concentration)
                g = np.zeros(vocab_size)
                g[rng.integers(vocab_size)] = 1.0
                total = 1.0
            tables[prefix] = g / total
    return new_tabular_model(vocab_size, depth, tables)


def mixed_model(base: ArModel, other: ArModel, weight: float) -> ArModel:
    """Row-wise mixture ``(1 - weight) * base + weight * other``.

    Handy for building drafts that stay within a chosen TV radius of a target:
    the conditional TV to ``base`` is at most ``weight``.
    """
    _check_compatible(base, other)
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    tables = {p: (1.0 - weight) * base.tables[p] + weight * other.tables[p] for p in base.prefixes()}
    return new_tabular_model(base.vocab_size, base.depth, tables)


def cond_prob(model: ArModel, prefix: Sequence[int], token: int) -> float:
    return float(model.row(prefix)[token])


def seq_prob(model: ArModel, seq: Sequence[int]) -> float:
    seq = tuple(seq)
    if len(seq) > model.depth:
        raise DepthExceeded(f"sequence of length {len(seq)} exceeds depth {model.depth}")
    prob = 1.0
    for i, tok in enumerate(seq):
        prob *= model.tables[seq[:i]][tok]
    return float(prob)


def _check_compatible(P: ArModel, Q: ArModel) -> None:
    if P.vocab_size != Q.vocab_size:
        raise VocabMismatch(f"vocab sizes differ: {P.vocab_size} vs {Q.vocab_size}")


def tv_rows(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * math.fsum(np.abs(np.asarray(a) - np.asarray(b)))


def tv_conditional(P: ArModel, Q: ArModel, prefix: Sequence[int]) -> float:
    _check_compatible(P, Q)
    return tv_rows(P.row(prefix), Q.row(prefix))


def check_closeness(P: ArModel, Q: ArModel, threshold: float = 0.4) -> tuple[bool, Prefix, float]:
    """Whether every conditional pair is within ``threshold`` in TV.

    Returns ``(ok, worst_prefix, worst_tv)``.
    """
    _check_compatible(P, Q)
    depth = min(P.depth, Q.depth)
    worst, worst_tv = (), -1.0
    for prefix in P.prefixes(depth):
        tv = tv_rows(P.tables[prefix], Q.tables[prefix])
        if tv > worst_tv:
            worst, worst_tv = prefix, tv
    return worst_tv <= threshold, worst, worst_tv


def sample_next(model: ArModel, prefix: Sequence[int], rng: np.random.Generator) -> int:
    """Inverse-CDF draw from the stored row; consumes exactly one uniform."""
    row = model.row(prefix)
    return inverse_cdf(row, rng.random())


def joint_probs(model: ArModel, length: int) -> np.ndarray:
    """Joint pmf over ``X^length`` as an array of shape ``(V,) * length``."""
    if length > model.depth:
        raise DepthExceeded(f"length {length} exceeds depth {model.depth}")
    V = model.vocab_size
    out = np.ones(())
    for n in range(length):
        cond = np.stack([model.tables[p] for p in all_prefixes(V, n)]).reshape((V,) * n + (V,))
        out = out[..., None] * cond
    return out


@dataclass(frozen=True, eq=False)
class TokenEmbedding:
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        if vec.ndim != 2 or vec.shape[1] < 1:
            raise ValueError("embedding vectors must be a (vocab_size, dim) array with dim >= 1")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding vectors must be finite")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def random_embeddings(vocab_size: int, dim: int = 4, seed: int = 0) -> TokenEmbedding:
    """Standard-normal synthetic token embeddings."""
    rng = np.random.default_rng(seed)
    return TokenEmbedding(rng.standard_normal((vocab_size, dim)))


# -- serialization ---------------------------------------------------------

def _prefix_key(prefix: Prefix) -> str:
    return ",".join(str(t) for t in prefix)


def _parse_key(key: str) -> Prefix:
    return tuple(int(t) for t in key.split(",")) if key else ()


def model_to_dict(model: ArModel) -> dict:
    return {
        "vocab_size": model.vocab_size,
        "depth": model.depth,
        "tables": {_prefix_key(p): [float(x) for x in model.tables[p]] for p in model.prefixes()},
    }


def model_from_dict(doc: Mapping) -> ArModel:
    tables = {_parse_key(k): v for k, v in doc["tables"].items()}
    return new_tabular_model(int(doc["vocab_size"]), int(doc["depth"]), tables)


def dumps_model(model: ArModel) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(model_to_dict(model))


def loads_model(text: str) -> ArModel:
    return model_from_dict(json.loads(text))
