"""Monte-Carlo sweep from a JSON spec, then a text summary of the sum-SE CDFs.

Usage: python3 demos/sum_se_cdf.py [spec.json]
"""

import sys

from cellfree.experiment import ExperimentSpec, cdf_quantile, emit_cdf, run_monte_carlo


def main(path="demos/small_sweep.json"):
    spec = ExperimentSpec.load(path)
    res = run_monte_carlo(spec)
    print(f"{spec.num_realizations} realizations of {spec.scenario}, CSVs in {spec.output_dir}")
    print(f"{'scheme':<6} {'10%':>8} {'median':>8} {'90%':>8}")
    for name in spec.solvers:
        pairs = emit_cdf(res.sum_se(name))
        q = [cdf_quantile(pairs, p) for p in (0.1, 0.5, 0.9)]
        print(f"{name:<6} {q[0]:>8.2f} {q[1]:>8.2f} {q[2]:>8.2f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
