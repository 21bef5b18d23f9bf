"""Exact TV against exact expected length for uniform and decaying schedules.

Prints, for each close model pair, the fraction of matched-length points
where the decaying schedule is at least as faithful as the uniform one, on
both the exact TV axis and the bound axis.

    python scripts/tradeoff_curves.py --pairs 50 --vocab 3 --L 2
"""

import argparse

import numpy as np

from relaxsd.exact import tvb_upper_bound
from relaxsd.experiments import close_pair, matched_length_wins, schedule_curve
from relaxsd.models import check_closeness
from relaxsd.rules import MultiplicativeRelax, OptimalGStar
from relaxsd.schedules import exp_schedule, uniform_schedule


def bound_curve(P, Q, make, deltas, L, lengths):
    tvb = [tvb_upper_bound(P, Q, MultiplicativeRelax(make(d)), OptimalGStar(), L) for d in deltas]
    return np.column_stack([lengths, tvb])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=50)
    ap.add_argument("--vocab", type=int, default=3)
    ap.add_argument("--L", type=int, default=2)
    ap.add_argument("--nu", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=10_000)
    args = ap.parse_args()

    deltas = np.round(np.arange(1.1, 4.0 + 1e-9, 0.1), 10)
    L = args.L
    tv_won = tv_n = b_won = b_n = 0
    pairs, s = 0, args.seed
    while pairs < args.pairs:
        P, Q = close_pair(args.vocab, L + 1, s)
        s += 1
        if not check_closeness(P, Q, 0.4)[0]:
            continue
        pairs += 1
        uni = schedule_curve(P, Q, lambda d: uniform_schedule(d, L), deltas, L)
        cool = schedule_curve(P, Q, lambda d: exp_schedule(d, args.nu, L), deltas, L)
        w, n = matched_length_wins(uni, cool)
        tv_won, tv_n = tv_won + w, tv_n + n
        ub = bound_curve(P, Q, lambda d: uniform_schedule(d, L), deltas, L, uni[:, 0])
        cb = bound_curve(P, Q, lambda d: exp_schedule(d, args.nu, L), deltas, L, cool[:, 0])
        w, n = matched_length_wins(ub, cb)
        b_won, b_n = b_won + w, b_n + n
        print(f"pair {pairs:3d} (seed {s - 1}): exact-TV wins {tv_won}/{tv_n}", flush=True)
    print(f"exact TV axis: decaying <= uniform on {tv_won}/{tv_n} = {tv_won / tv_n:.3f}")
    print(f"bound axis:    decaying <= uniform on {b_won}/{b_n} = {b_won / b_n:.3f}")


if __name__ == "__main__":
    main()
