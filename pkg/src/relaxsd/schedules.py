"""Position-wise relaxation multipliers for the multiplicative acceptance rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import SlopeTooSteep


@dataclass(frozen=True)
class Schedule:
    omegas: tuple[float, ...]
    kind: str = "custom"
    delta: float | None = None
    nu: float | None = None
    ell: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if not self.omegas:
            raise ValueError("schedule must have at least one position")
        if any(not (w > 0 and math.isfinite(w)) for w in self.omegas):
            raise ValueError(f"relaxation multipliers must be positive and finite: {self.omegas}")

    @property
    def L(self) -> int:
        return len(self.omegas)

    def __len__(self) -> int:
        return len(self.omegas)

    def __getitem__(self, i: int) -> float:
        return self.omegas[i]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta": self.delta, "nu": self.nu, "ell": self.ell, "L": self.L}


def _check(delta: float, L: int) -> None:
    if not delta > 0:
        raise ValueError("delta must be positive")
    if L < 1:
        raise ValueError("L must be at least 1")


def uniform_schedule(delta: float, L: int) -> Schedule:
    _check(delta, L)
    return Schedule((float(delta),) * L, kind="uniform", delta=float(delta))


def exp_schedule(delta: float, nu: float, L: int) -> Schedule:
    """Exponentially decaying multipliers normalized so that they sum to ``delta * L``.

    ``omega_i = delta * exp(-nu*i - mu)`` with ``mu`` chosen so the decayed
    weights sum to ``L``; ``mu`` cancels out analytically and is never formed.
    """
    _check(delta, L)
    if nu < 0:
        raise ValueError("nu must be non-negative")
    # shift exponents by nu*1 so the largest weight is exp(0); avoids underflow for big nu
    w = [math.exp(-nu * (i - 1)) for i in range(1, L + 1)]
    total = math.fsum(w)
    omegas = tuple(delta * L * x / total for x in w)
    return Schedule(omegas, kind="exponential", delta=float(delta), nu=float(nu))


def exp_schedule_mu(nu: float, L: int) -> float:
    """The normalizer with ``sum_i exp(-nu*i - mu) == L``."""
    return math.log(math.fsum(math.exp(-nu * i) for i in range(1, L + 1)) / L)


def linear_schedule(delta: float, ell: int, L: int) -> Schedule:
    """Linearly decaying multipliers ``omega_i ∝ (ell - i)``, summing to ``delta * L``."""
    _check(delta, L)
    if ell <= L:
        raise SlopeTooSteep(f"ell={ell} must exceed L={L} for every weight to stay positive")
    raw = [(ell - i) / (ell * (ell + 1)) for i in range(1, L + 1)]
    total = math.fsum(raw)
    omegas = tuple(delta * L * x / total for x in raw)
    return Schedule(omegas, kind="linear", delta=float(delta), ell=int(ell))


def schedule_from_dict(doc: dict) -> Schedule:
    kind = doc["kind"]
    L = int(doc["L"])
    if kind == "uniform":
        return uniform_schedule(float(doc["delta"]), L)
    if kind == "exponential":
        return exp_schedule(float(doc["delta"]), float(doc["nu"]), L)
    if kind == "linear":
        return linear_schedule(float(doc["delta"]), int(doc["ell"]), L)
    raise ValueError(f"unknown schedule kind {kind!r}")
