"""Paired first/second-position perturbations at fixed expected length.

    python scripts/perturbation_study.py --models 200 --c2 0.02 --delta 1.5
"""

import argparse

from relaxsd.exact import perturbation_experiment
from relaxsd.experiments import close_pair
from relaxsd.schedules import uniform_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", type=int, default=200)
    ap.add_argument("--c2", type=float, default=0.02)
    ap.add_argument("--delta", type=float, default=1.5)
    ap.add_argument("--vocab", type=int, default=3)
    ap.add_argument("--margin", type=float, default=0.3)
    args = ap.parse_args()

    wins = admitted = tried = 0
    gaps = []
    while admitted < args.models:
        P, Q = close_pair(args.vocab, 3, tried)
        tried += 1
        early, late = perturbation_experiment(P, Q, uniform_schedule(args.delta, 2), -abs(args.c2),
                                              margin_threshold=args.margin, allow_overshoot=True)
        if not early.assumptions_ok:
            continue
        admitted += 1
        wins += early.tvb <= late.tvb
        gaps.append(late.tvb - early.tvb)
    gaps.sort()
    print(f"admitted {admitted} of {tried} candidates")
    print(f"relax-early bound <= tighten-early bound on {wins}/{admitted} = {wins / admitted:.3f}")
    print(f"bound gap (tighten - relax): min {gaps[0]:.2e}, median {gaps[len(gaps) // 2]:.2e}, max {gaps[-1]:.2e}")


if __name__ == "__main__":
    main()
