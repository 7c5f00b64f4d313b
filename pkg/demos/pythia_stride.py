"""Pythia learns a +3 stride and covers most of the baseline's LLC misses."""

import collections

from memlearn import SimConfig, paired_run
from memlearn.trace import Pattern, SyntheticSpec


def main():
    spec = SyntheticSpec(Pattern.STRIDE, 100_000, stride_lines=3, pages=1)
    out = paired_run(SimConfig(seed=1, synthetic=spec, prefetcher="pythia"))
    print(f"baseline LLC misses  {out['baseline'].llc_misses}")
    print(f"with Pythia          {out['with_mechanisms'].llc_misses}")
    print(f"coverage {out['coverage']:.3f}  overprediction {out['overprediction']:.3f}  "
          f"speedup {out['speedup']:.3f}")
    agent = out["simulations"][1].prefetcher
    top = collections.Counter({agent.config.actions[a]: n for a, n in agent.stats.action_counts.items()})
    print("most chosen offsets:", top.most_common(3))


if __name__ == "__main__":
    main()
