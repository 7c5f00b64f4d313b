"""Athena switches prefetching on and off as a trace alternates stride and pointer-chase phases."""

import collections

from memlearn import HermesSettings, SimConfig, Simulation
from memlearn.trace import Pattern, SyntheticSpec

PHASE = 50_000


def main():
    spec = SyntheticSpec(Pattern.PHASE_SWITCH, 500_000, stride_lines=1, pages=4096,
                         load_fraction=0.3, phase_len=PHASE)
    cfg = SimConfig(seed=3, synthetic=spec, prefetcher="nextline", athena_enabled=True,
                    hermes=HermesSettings(enabled=True))
    sim = Simulation(cfg)
    sim.run()
    epoch = cfg.athena.epoch_len
    by_phase = collections.defaultdict(collections.Counter)
    for e in sim.athena.log:
        kind = "stride" if ((e.epoch + 1) * epoch // PHASE) % 2 == 0 else "chase"
        by_phase[kind][f"{e.action}:{e.degree}"] += 1
    for kind, counts in by_phase.items():
        print(f"{kind:6s} phase actions: {counts.most_common(3)}")


if __name__ == "__main__":
    main()
