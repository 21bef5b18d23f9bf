"""Experiment plumbing: configs, method construction, sweeps and verification suites."""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import exact
from .decode import SdConfig, simulate
from .errors import ConfigError, DegenerateResidual, DominanceViolated
from .models import (
    ArModel,
    check_closeness,
    mixed_model,
    model_from_dict,
    random_embeddings,
    random_model,
)
from .rules import (
    LanternPP,
    LanternResidual,
    MultiplicativeRelax,
    OptimalGStar,
    Vanilla,
    VanillaResidual,
)
from .schedules import Schedule, exp_schedule, linear_schedule, uniform_schedule

METHODS = ("vanilla", "uniform", "cool_exp", "cool_linear", "lantern", "lantern_gstar")
RESAMPLINGS = ("vanilla", "gstar", "lantern")
SWEEP_COLUMNS = ("method", "delta", "aux", "exact_tv", "tvb", "expected_len", "mc_mean_len", "mc_stderr", "wall_ms")

_METHOD_KEYS = {
    "vanilla": set(),
    "uniform": {"delta"},
    "cool_exp": {"delta", "nu"},
    "cool_linear": {"delta", "ell"},
    "lantern": {"k", "lam", "embed_seed", "embed_dim"},
    "lantern_gstar": {"k", "lam", "embed_seed", "embed_dim"},
}


def close_pair(vocab_size: int, depth: int, seed: int, *, concentration: float = 1.0, mix=(0.2, 0.8)) -> tuple[ArModel, ArModel]:
    """Target plus a draft mixed toward an independent model.

    The mixing weight is drawn uniformly from ``mix``; it bounds every
    conditional TV between the pair.
    """
    rng = np.random.default_rng([seed, 7])
    eta = float(rng.uniform(*mix))
    P = random_model(vocab_size, depth, concentration, 2 * seed)
    R = random_model(vocab_size, depth, concentration, 2 * seed + 1)
    return P, mixed_model(P, R, eta)


def random_pair(vocab_size: int, depth: int, seed: int, concentration: float = 1.0) -> tuple[ArModel, ArModel]:
    return (random_model(vocab_size, depth, concentration, 2 * seed),
            random_model(vocab_size, depth, concentration, 2 * seed + 1))


def build_method(method: dict, L: int, vocab_size: int, resampling: str | None = None):
    """``(acceptance, resampling, delta, aux)`` for a method description."""
    name = method.get("name")
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}")
    extra = set(method) - {"name"} - _METHOD_KEYS[name]
    if extra:
        raise ConfigError(f"unknown keys for method {name}: {sorted(extra)}")
    delta = float(method.get("delta", 1.0))
    aux: float | int | None = None
    if name == "vanilla":
        acc, res = Vanilla(), VanillaResidual()
    elif name == "uniform":
        acc, res = MultiplicativeRelax(uniform_schedule(delta, L)), OptimalGStar()
    elif name == "cool_exp":
        aux = float(method.get("nu", 0.7))
        acc, res = MultiplicativeRelax(exp_schedule(delta, aux, L)), OptimalGStar()
    elif name == "cool_linear":
        aux = int(method.get("ell", 8))
        acc, res = MultiplicativeRelax(linear_schedule(delta, aux, L)), OptimalGStar()
    else:
        k = int(method.get("k", 2))
        lam = float(method.get("lam", 2.0))
        emb = random_embeddings(vocab_size, int(method.get("embed_dim", 4)), int(method.get("embed_seed", 0)))
        acc = LanternPP(k, lam, emb)
        res = LanternResidual(k, lam, emb) if name == "lantern" else OptimalGStar()
        delta, aux = lam, k
    if resampling is not None:
        if resampling not in RESAMPLINGS:
            raise ConfigError(f"unknown resampling {resampling!r}")
        if resampling == "vanilla":
            res = VanillaResidual()
        elif resampling == "gstar":
            res = OptimalGStar()
        elif not isinstance(acc, LanternPP):
            raise ConfigError("lantern resampling needs a lantern method")
        else:
            res = LanternResidual(acc.k, acc.lam, acc.embeddings)
    return acc, res, delta, aux


# -- configuration -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    models: dict = field(default_factory=lambda: {
        "random": {"vocab_size": 3, "depth": 3, "concentration": 1.0, "seed_p": 0, "seed_q": 1}})
    L: int = 2
    method: dict = field(default_factory=lambda: {"name": "vanilla"})
    resampling: str | None = None
    n_rounds: int = 10000
    seed: int = 0
    output_path: str | None = None
    sweep: dict = field(default_factory=lambda: {
        "methods": [{"name": "uniform"}, {"name": "cool_exp", "nu": 0.7}],
        "deltas": [1.0, 1.5, 2.0, 3.0],
        "lambdas": [1.0, 2.0],
    })
    verify: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.L, int) or self.L < 1:
            raise ConfigError("L must be a positive integer")
        if not isinstance(self.n_rounds, int) or self.n_rounds < 1:
            raise ConfigError("n_rounds must be a positive integer")
        if not isinstance(self.method, dict):
            raise ConfigError("method must be an object with a single 'name'")
        if set(self.models) - {"random", "inline"} or len(self.models) != 1:
            raise ConfigError("models must hold exactly one of 'random' or 'inline'")
        if set(self.sweep) - {"methods", "deltas", "lambdas"}:
            raise ConfigError(f"unknown sweep keys: {sorted(set(self.sweep) - {'methods', 'deltas', 'lambdas'})}")
        if set(self.verify) - set(VERIFY_DEFAULTS):
            raise ConfigError(f"unknown verify keys: {sorted(set(self.verify) - set(VERIFY_DEFAULTS))}")

    def load_models(self) -> tuple[ArModel, ArModel]:
        try:
            if "inline" in self.models:
                src = self.models["inline"]
                if set(src) != {"target", "draft"}:
                    raise ConfigError("inline models need exactly 'target' and 'draft'")
                P, Q = model_from_dict(src["target"]), model_from_dict(src["draft"])
            else:
                src = dict(self.models["random"])
                allowed = {"vocab_size", "depth", "concentration", "seed_p", "seed_q", "draft_mix"}
                if set(src) - allowed:
                    raise ConfigError(f"unknown random-model keys: {sorted(set(src) - allowed)}")
                V, D = int(src["vocab_size"]), int(src["depth"])
                conc = float(src.get("concentration", 1.0))
                P = random_model(V, D, conc, int(src.get("seed_p", 0)))
                Q = random_model(V, D, conc, int(src.get("seed_q", 1)))
                if "draft_mix" in src:
                    Q = mixed_model(P, Q, float(src["draft_mix"]))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model specification: {exc}") from None
        if min(P.depth, Q.depth) < self.L + 1:
            raise ConfigError(f"model depth {min(P.depth, Q.depth)} is too shallow for L={self.L}")
        if P.vocab_size != Q.vocab_size:
            raise ConfigError("target and draft vocabularies differ")
        return P, Q

    def sd_config(self, vocab_size: int) -> SdConfig:
        acc, res, _, _ = build_method(self.method, self.L, vocab_size, self.resampling)
        return SdConfig(self.L, acc, res, self.seed)


# -- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    method: str
    delta: float
    aux: float | int | None
    exact_tv: float
    tvb: float
    expected_len: float
    mc_mean_len: float
    mc_stderr: float
    wall_ms: float

    def cells(self) -> list[str]:
        fmt = lambda v: "" if v is None else repr(v)  # noqa: E731
        return [self.method] + [fmt(getattr(self, c)) for c in SWEEP_COLUMNS[1:]]


def sweep_point(P: ArModel, Q: ArModel, method: dict, L: int, n_rounds: int, seed: int) -> SweepRow:
    t0 = time.perf_counter()
    acc, res, delta, aux = build_method(method, L, P.vocab_size)
    dist = exact.exact_output_dist(P, Q, acc, res, L)
    tv = exact.tv_exact(dist, exact.target_dist(P, L + 1))
    tvb = exact.tvb_upper_bound(P, Q, acc, res, L)
    length = exact.exact_expected_accepted(P, Q, acc, L)
    if n_rounds > 0:
        sim = simulate(P, Q, SdConfig(L, acc, res, seed), n_rounds)
        mc, se = sim.mean_accepted_len, sim.stderr
    else:
        mc, se = float("nan"), float("nan")
    wall = (time.perf_counter() - t0) * 1000.0
    return SweepRow(method["name"], delta, aux, tv, tvb, length, mc, se, round(wall, 3))


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    methods = cfg.sweep.get("methods", [])
    deltas = cfg.sweep.get("deltas", [])
    lambdas = cfg.sweep.get("lambdas", [])
    points = []
    for m in methods:
        if not isinstance(m, dict) or "name" not in m:
            raise ConfigError("each sweep method must be an object with a 'name'")
        if m["name"] == "vanilla":
            points.append(dict(m))
        elif m["name"] in ("lantern", "lantern_gstar"):
            points += [dict(m, lam=float(lam)) for lam in lambdas]
        else:
            points += [dict(m, delta=float(d)) for d in deltas]
    if not points:
        raise ConfigError("sweep grid is empty")
    return points


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> list[SweepRow]:
    P, Q = cfg.load_models()
    points = sweep_points(cfg)
    for m in points:
        build_method(m, cfg.L, P.vocab_size)  # validate before doing any work
    job = lambda m: sweep_point(P, Q, m, cfg.L, cfg.n_rounds, cfg.seed)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, points))
    else:
        rows = [job(m) for m in points]
    return sorted(rows, key=lambda r: (r.method, r.delta, -1 if r.aux is None else r.aux))


def matched_length_wins(reference: np.ndarray, candidate: np.ndarray, tol: float = 0.0) -> tuple[int, int]:
    """Compare two (expected_len, exact_tv) curves at equal expected length.

    Each candidate point whose length falls inside the reference curve's
    length range is matched against the reference TV linearly interpolated
    at that length. Returns ``(wins, matched)`` where a win means the
    candidate's TV is no larger.
    """
    ref = np.asarray(reference, dtype=float)
    order = np.argsort(ref[:, 0], kind="stable")
    xs, ys = ref[order, 0], ref[order, 1]
    wins = matched = 0
    for length, tv in np.asarray(candidate, dtype=float):
        if xs[0] <= length <= xs[-1]:
            matched += 1
            wins += tv <= float(np.interp(length, xs, ys)) + tol
    return wins, matched


def schedule_curve(P: ArModel, Q: ArModel, make: Callable[[float], Schedule], deltas, L: int) -> np.ndarray:
    target = exact.target_dist(P, L + 1)
    out = []
    for d in deltas:
        acc = MultiplicativeRelax(make(d))
        dist = exact.exact_output_dist(P, Q, acc, OptimalGStar(), L)
        out.append((exact.exact_expected_accepted(P, Q, acc, L), exact.tv_exact(dist, target)))
    return np.array(out)


# -- verification suites -----------------------------------------------------

VERIFY_DEFAULTS: dict[str, Any] = {
    "n_seeds": 100,
    "vocab_size": 3,
    "L": 2,
    "mc_rounds": 20000,
    "mc_configs": 5,
    "lp_triples": 20,
    "perturbation_models": 50,
    "dominance_negative": True,
}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""
    expected_failure: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag:5s} {self.name:28s} worst={self.worst:.3e} {self.detail}".rstrip()


def _suite_models(V: int, L: int, seed: int) -> ArModel:
    return random_model(V, L + 1, 1.0, seed)


def run_verify_suites(cfg: ExperimentConfig, seed_offset: int = 0) -> list[SuiteResult]:
    opts = dict(VERIFY_DEFAULTS, **cfg.verify)
    V, L, n = int(opts["vocab_size"]), int(opts["L"]), int(opts["n_seeds"])
    seeds = [seed_offset + s for s in range(n)]
    out: list[SuiteResult] = []

    # model invariants: rows normalized, joint sums to one
    worst = 0.0
    for s in seeds:
        P = _suite_models(V, L, s)
        worst = max(worst, abs(float(exact.target_dist(P, L + 1).total()) - 1.0))
        for p in P.prefixes():
            worst = max(worst, abs(math.fsum(P.tables[p]) - 1.0))
    out.append(SuiteResult("model_normalization", worst <= 1e-10, worst))

    # lossless vanilla round, bound collapses to zero
    worst_tv = worst_tvb = 0.0
    for s in seeds:
        P, Q = random_pair(V, L + 1, s)
        d = exact.exact_output_dist(P, Q, Vanilla(), VanillaResidual(), L)
        worst_tv = max(worst_tv, exact.tv_exact(d, exact.target_dist(P, L + 1)))
        worst_tvb = max(worst_tvb, exact.tvb_upper_bound(P, Q, Vanilla(), VanillaResidual(), L))
    out.append(SuiteResult("lossless_vanilla", worst_tv <= 1e-12, worst_tv))
    out.append(SuiteResult("bound_zero_at_vanilla", worst_tvb <= 1e-12, worst_tvb))

    # bound soundness and closed form == path walk, across rule variants
    worst_sound = -math.inf
    worst_cf = 0.0
    worst_red = 0.0
    for s in seeds:
        P, Q = random_pair(V, L + 1, s)
        for sched in (uniform_schedule(2.0, L), exp_schedule(1.5, 0.7, L), linear_schedule(2.0, 8, L)):
            acc = MultiplicativeRelax(sched)
            walk = exact.path_enumeration_dist(P, Q, acc, OptimalGStar(), L)
            closed = exact.closed_form_dist(P, Q, acc, OptimalGStar(), L)
            worst_cf = max(worst_cf, float(np.max(np.abs(walk.probs - closed.probs))))
            tv = exact.tv_exact(walk, exact.target_dist(P, L + 1))
            tvb = exact.tvb_upper_bound(P, Q, acc, OptimalGStar(), L)
            worst_sound = max(worst_sound, tv - tvb)
            if sched.kind == "uniform":
                worst_red = max(worst_red, abs(tvb - exact.tvb_gstar_reduced(P, Q, acc, L)))
    out.append(SuiteResult("bound_soundness", worst_sound <= 1e-10, worst_sound, "max(tv - tvb)"))
    out.append(SuiteResult("closed_form_vs_paths", worst_cf <= 1e-10, worst_cf))
    out.append(SuiteResult("reduced_bound_gstar", worst_red <= 1e-10, worst_red))

    # expected accepted length against Monte Carlo (3 sigma)
    worst_z = 0.0
    for s in seeds[: int(opts["mc_configs"])]:
        P, Q = random_pair(V, L + 1, s)
        acc = MultiplicativeRelax(exp_schedule(1.5, 0.7, L))
        ex = exact.exact_expected_accepted(P, Q, acc, L)
        sim = simulate(P, Q, SdConfig(L, acc, OptimalGStar(), s), int(opts["mc_rounds"]))
        worst_z = max(worst_z, abs(sim.mean_accepted_len - ex) / max(sim.stderr, 1e-15))
    out.append(SuiteResult("expected_length_mc", worst_z <= 3.0, worst_z, "z-score"))

    # optimal resampling against a simplex grid
    rng = np.random.default_rng(seed_offset + 11)
    worst_gap = -math.inf
    worst_closed = 0.0
    for _ in range(int(opts["lp_triples"])):
        p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        fvan = np.minimum(1.0, p / q)
        f = fvan + rng.uniform(0, 1, 3) * (1.0 - fvan)
        g, obj, closed = exact.lp_analytic(p, q, f)
        bf = exact.brute_force_optimal_resample(p, q, f, 0.005)
        worst_gap = max(worst_gap, obj - bf["best_objective"])
        worst_closed = max(worst_closed, abs(obj - closed))
    out.append(SuiteResult("lp_optimal_resampling", worst_gap <= 3 * 0.005 and worst_closed <= 1e-12,
                           max(worst_gap, worst_closed)))

    # optimal resampling equals vanilla residual under dominance
    worst = 0.0
    for s in seeds:
        P, Q = random_pair(V, L + 1, s)
        acc = MultiplicativeRelax(uniform_schedule(1.0 + (s % 4) * 0.5, L))
        for n_ in range(L):
            for prefix in P.prefixes(n_ + 1):
                if len(prefix) != n_:
                    continue
                try:
                    worst = max(worst, exact.verify_proposition1(P, Q, acc, prefix, n_ + 1))
                except DegenerateResidual:
                    pass
    out.append(SuiteResult("gstar_equals_vanilla", worst <= 1e-12, worst))

    if opts["dominance_negative"]:
        P, Q = random_pair(V, L + 1, seed_offset)
        try:
            exact.verify_proposition1(P, Q, MultiplicativeRelax(uniform_schedule(0.5, L)), (), 1)
            out.append(SuiteResult("dominance_violation_reported", False, 0.0, "omega=0.5 accepted silently"))
        except DominanceViolated as exc:
            out.append(SuiteResult("dominance_violation_reported", True, 0.0,
                                   f"expected failure raised: {type(exc).__name__}", expected_failure=True))

    # positivity condition for the second position
    worst = math.inf
    checked = 0
    for s in seeds:
        P, Q = close_pair(V, 3, s)
        acc = MultiplicativeRelax(uniform_schedule(1.0 + (s % 4) * 0.5, 2))
        if not check_closeness(P, Q, 0.4)[0]:
            continue
        checked += 1
        worst = min(worst, exact.second_position_gap(P, Q, acc))
    out.append(SuiteResult("second_position_positivity", checked > 0 and worst >= 0.0, worst,
                           f"{checked} models"))

    # annealing under equal expected length
    wins, admitted, s = 0, 0, seed_offset
    target = int(opts["perturbation_models"])
    while admitted < target and s < seed_offset + 200 * target:
        P, Q = close_pair(V, 3, s)
        s += 1
        relax_early, tighten_early = exact.perturbation_experiment(P, Q, (1.5, 1.5), -0.02, allow_overshoot=True)
        if not relax_early.assumptions_ok:
            continue
        admitted += 1
        wins += relax_early.tvb <= tighten_early.tvb
    frac = wins / admitted if admitted else 0.0
    out.append(SuiteResult("annealing_perturbation", admitted > 0 and frac >= 0.9, frac,
                           f"{wins}/{admitted} admitted models"))
    return out
