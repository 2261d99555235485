"""How much do covariate regions tighten the bounds?

Compares the width ``mu_up - mu_lo`` of each generated hypothesis with its
whole-space counterpart, where only action matching narrows the interval.
Regions change the population, so narrower is not guaranteed; the script
reports the ratio distribution and the match fractions behind it.

    python scripts/manski_width.py --n-obs 10000 --bias 1.0
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from twinfalsify.bounds import estimate_bounds, manski_hypothesis
from twinfalsify.cli import stratified_generator_config
from twinfalsify.regions import generate_hypotheses
from twinfalsify.synth import SynthConfig, generate_observational
from twinfalsify.trajectory import split_holdout


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-obs", type=int, default=10000)
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--bias", type=float, default=1.0, help="policy confounding strength in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    cfg = SynthConfig(policy_bias=args.bias)
    holdout, test = split_holdout(generate_observational(cfg, args.n_obs, args.seed), args.holdout, args.seed)
    hyps = [h for h in generate_hypotheses(holdout, stratified_generator_config()).hypotheses if h.direction == "lo"]

    ratios, frac, frac_m = [], [], []
    for h in hyps:
        e = estimate_bounds(test, None, h)
        m = estimate_bounds(test, None, manski_hypothesis(h))
        if e.n and m.n and m.width > 0:
            ratios.append(e.width / m.width)
            frac.append(e.match_fraction)
            frac_m.append(m.match_fraction)
    if not ratios:
        print("no hypothesis had support in the test split")
        return 1
    r = np.array(ratios)
    print(f"hypotheses with support: {r.size} of {len(hyps)}")
    print(f"width ratio regions/whole-space: median {np.median(r):.3f}, "
          f"10% {np.quantile(r, 0.1):.3f}, 90% {np.quantile(r, 0.9):.3f}")
    print(f"narrower than whole-space: {np.mean(r < 1):.1%}")
    print(f"mean match fraction: regions {np.mean(frac):.3f}, whole-space {np.mean(frac_m):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
