"""Compare FULL, HEU, APG and SCA on one realization of a preset network.

Usage: python3 demos/compare_schemes.py [preset] [realization]
"""

import sys

import numpy as np

from cellfree import apg_solve, full_solve, heu_solve, make_realization, preset, sca_solve


def main(name="small-25x7", index=0):
    cfg = preset(name)
    r = make_realization(cfg, index)
    print(f"{name}: M={cfg.num_aps} APs, K={cfg.num_ues} UEs, K_hat={cfg.max_served}, "
          f"realization {index}")
    print(f"{'scheme':<6} {'sum SE':>8} {'min SE':>7} {'links':>6} {'feasible':>9} {'time [s]':>9}")
    for solve in (full_solve, heu_solve, apg_solve, sca_solve):
        out = solve(r, cfg)
        print(f"{out.solver:<6} {out.sum_se:>8.3f} {np.min(out.se_per_ue):>7.3f} "
              f"{int(out.a.sum()):>6} {str(out.feasible):>9} {out.wall_time:>9.2f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(args[0] if args else "small-25x7", int(args[1]) if len(args) > 1 else 0)
