"""Hermes: predicted off-chip loads skip the cache walk; hit levels never change."""

from memlearn import HermesSettings, SimConfig, Simulation
from memlearn.trace import Kind, TraceRecord


def trace(n=10_000):
    # PCs 0x5000xx always touch fresh lines, PCs 0x6000xx reuse 16 hot lines
    recs = []
    for i in range(n):
        recs.append(TraceRecord(2 * i, 0x500000 + 0x40 * (i % 8), Kind.LOAD,
                                0x7000_0000 + i * 64 * 67 % (1 << 34), 8))
        recs.append(TraceRecord(2 * i + 1, 0x600000 + 0x40 * (i % 8), Kind.LOAD,
                                0x100000 + (i % 16) * 64, 8))
    return recs


def main():
    recs = trace()
    off = Simulation(SimConfig(seed=1), recs, record_accesses=True)
    on = Simulation(SimConfig(seed=1, hermes=HermesSettings(enabled=True)), recs, record_accesses=True)
    r_off, r_on = off.run(), on.run()
    print(f"cycles without Hermes {r_off.total_cycles}, with Hermes {r_on.total_cycles}")
    print(f"POPET accuracy {r_on.ocp_accuracy:.3f}  coverage {r_on.ocp_coverage:.3f}")
    print("identical hit levels:", off.accesses == on.accesses)


if __name__ == "__main__":
    main()
