#!/usr/bin/env python3
"""Step-size study on one builtin scenario.

For each step size, runs a batch of paired-seed chains and reports the mean
distance of the running average to the zero witness, the pooled occupation
fraction outside an epsilon ball, and the median sup-distance to the
reference flow over a short horizon.  Results go to stdout and optionally
to a CSV.
"""

import argparse
import sys

import numpy as np

from fbmm.config import build_model, draw_initial_point
from fbmm.di_reference import solve_di
from fbmm.diagnostics import shadowing, wilson_interval
from fbmm.fb_engine import OccupationAccumulator, run_chain, run_chain_batch
from fbmm.scenarios import builtin_scenarios


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="lasso-constrained")
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.1, 0.02, 0.005])
    ap.add_argument("--n-steps", type=int, default=20_000)
    ap.add_argument("--n-chains", type=int, default=20)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--shadow-t", type=float, default=3.0)
    ap.add_argument("--shadow-h", type=float, default=1e-3)
    ap.add_argument("--master-seed", type=int, default=2024)
    ap.add_argument("--csv", help="also write the table to this path")
    args = ap.parse_args()

    cfg = builtin_scenarios()[args.scenario]
    model = build_model(cfg)
    if model.x_star is None:
        print("scenario lacks a zero witness", file=sys.stderr)
        return 1

    if cfg.init["kind"] == "point":
        shadow_x0 = np.asarray(cfg.init["value"], dtype=float)
    else:
        shadow_x0 = np.asarray(cfg.init["mean"], dtype=float)
    flow = solve_di(model, shadow_x0, args.shadow_t, args.shadow_h)

    rows = []
    for gamma in args.gammas:
        rngs, x0s = [], []
        for k in range(args.n_chains):
            rng = np.random.default_rng(np.random.SeedSequence([args.master_seed, k]))
            x0s.append(draw_initial_point(cfg.init, rng, cfg.dimension))
            rngs.append(rng)
        acc = OccupationAccumulator(model.x_star, [args.eps])
        batch = run_chain_batch(model, gamma, args.n_steps, np.array(x0s), rngs, accumulators=[acc])
        cesaro = float(np.linalg.norm(batch.cesaro - model.x_star, axis=1).mean())
        k_out, n_tot = acc.pooled()
        frac = k_out[0] / n_tot
        lo, hi = wilson_interval(int(k_out[0]), int(n_tot))

        sups = []
        n_shadow = int(round(args.shadow_t / gamma))
        for k in range(args.n_chains):
            rng = np.random.default_rng(np.random.SeedSequence([args.master_seed, 31, k]))
            traj = run_chain(model, gamma, n_shadow, shadow_x0, rng=rng)
            rep = shadowing(model, traj, flow, args.shadow_t, int(args.shadow_t))
            sups.append(rep.sup_dist)
        rows.append((gamma, cesaro, frac, lo, hi, float(np.median(sups))))

    header = f"{'gamma':>8} {'cesaro_dist':>12} {'occ_frac':>9} {'occ_ci':>19} {'shadow_med':>11}"
    print(header)
    for g, ces, frac, lo, hi, med in rows:
        print(f"{g:>8g} {ces:>12.5f} {frac:>9.4f} [{lo:>8.4f},{hi:>8.4f}] {med:>11.5f}")

    if args.csv:
        with open(args.csv, "w", newline="\n") as fh:
            fh.write("gamma,cesaro_dist,occupation_fraction,occ_ci_lo,occ_ci_hi,shadow_sup_median\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
