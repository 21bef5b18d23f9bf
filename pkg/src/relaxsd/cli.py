"""Command-line driver: ``relaxsd verify|sweep|simulate <config> [--out] [--seed] [--threads]``.

Exit codes: 0 success, 1 suite failure, 2 config or IO error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from .decode import simulate
from .errors import ConfigError, RelaxSDError
from .experiments import SWEEP_COLUMNS, ExperimentConfig, run_sweep, run_verify_suites

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(doc)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _out_path(cfg: ExperimentConfig, out: str | None, default: str) -> Path:
    return Path(out or cfg.output_path or default)


def write_csv(path: Path, header, rows) -> None:
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def cmd_verify(config_path, *, seed=None, threads=1, out=None, stream=None) -> int:
    cfg = load_config(config_path, seed)
    stream = stream or sys.stdout
    t0 = time.perf_counter()
    results = run_verify_suites(cfg, seed_offset=cfg.seed)
    lines = [r.line() for r in results]
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} suites passed in {time.perf_counter() - t0:.1f}s")
    report = "\n".join(lines) + "\n"
    stream.write(report)
    if out:
        try:
            Path(out).write_text(report)
        except OSError as exc:
            raise ConfigError(f"cannot write {out}: {exc}") from None
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_sweep(config_path, *, seed=None, threads=1, out=None, stream=None) -> int:
    cfg = load_config(config_path, seed)
    stream = stream or sys.stdout
    rows = run_sweep(cfg, threads=threads)
    path = _out_path(cfg, out, "sweep.csv")
    write_csv(path, SWEEP_COLUMNS, [r.cells() for r in rows])
    bad = [r for r in rows if r.exact_tv > r.tvb + 1e-10]
    stream.write(f"wrote {len(rows)} rows to {path}\n")
    for r in bad:
        stream.write(f"FAIL bound violated: {r.method} delta={r.delta} tv={r.exact_tv} tvb={r.tvb}\n")
    return EXIT_FAIL if bad else EXIT_OK


def cmd_simulate(config_path, *, seed=None, threads=1, out=None, stream=None) -> int:
    cfg = load_config(config_path, seed)
    stream = stream or sys.stdout
    P, Q = cfg.load_models()
    sd = cfg.sd_config(P.vocab_size)
    res = simulate(P, Q, sd, cfg.n_rounds, threads=threads, keep_outcomes=True)
    path = _out_path(cfg, out, "simulate.csv")
    write_csv(path, ("round", "tau", "bonus_used", "tokens"),
              ([i, o.tau, int(o.bonus_used), " ".join(map(str, o.tokens))] for i, o in enumerate(res.outcomes)))
    summary = {
        "n_rounds": res.n_rounds,
        "seed": cfg.seed,
        "L": cfg.L,
        "method": cfg.method,
        "mean_accepted_len": res.mean_accepted_len,
        "stderr": res.stderr,
        "per_position_accept_rate": [None if r != r else r for r in res.per_position_accept_rate],
    }
    summary_path = path.with_suffix(".json")
    try:
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {summary_path}: {exc}") from None
    stream.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "sweep": cmd_sweep, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relaxsd", description="Exact and Monte Carlo analysis of relaxed speculative decoding.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config_path")
    ap.add_argument("--out", default=None, help="output path (CSV for sweep/simulate, report for verify)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args.config_path, seed=args.seed, threads=args.threads, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RelaxSDError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
