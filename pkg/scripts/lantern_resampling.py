"""LANTERN++ acceptance with its own residual versus the optimal resampling row.

    python scripts/lantern_resampling.py --seeds 30 --vocab 6 --L 2
"""

import argparse

from relaxsd.exact import exact_output_dist, target_dist, tv_exact, tvb_upper_bound
from relaxsd.experiments import random_pair
from relaxsd.models import random_embeddings
from relaxsd.rules import LanternPP, LanternResidual, OptimalGStar


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--vocab", type=int, default=6)
    ap.add_argument("--L", type=int, default=2)
    args = ap.parse_args()
    L = args.L
    print("k,lam,no_worse_tv,strict_tv,no_worse_tvb,max_tv_excess")
    for k in (2, 3):
        for lam in (1.0, 2.0):
            no_worse = strict = bound_ok = 0
            excess = 0.0
            for s in range(args.seeds):
                P, Q = random_pair(args.vocab, L + 1, 3000 + s)
                emb = random_embeddings(args.vocab, 4, s)
                acc, own = LanternPP(k, lam, emb), LanternResidual(k, lam, emb)
                target = target_dist(P, L + 1)
                a = tv_exact(exact_output_dist(P, Q, acc, own, L), target)
                b = tv_exact(exact_output_dist(P, Q, acc, OptimalGStar(), L), target)
                no_worse += b <= a + 1e-12
                strict += b < a - 1e-12
                excess = max(excess, b - a)
                bound_ok += tvb_upper_bound(P, Q, acc, OptimalGStar(), L) <= tvb_upper_bound(P, Q, acc, own, L) + 1e-12
            print(f"{k},{lam:g},{no_worse},{strict},{bound_ok},{excess:.3e}")


if __name__ == "__main__":
    main()
