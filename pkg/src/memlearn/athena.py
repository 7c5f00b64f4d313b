"""Athena: an RL agent that decides, once per epoch, whether the prefetcher
and the off-chip predictor run, and how aggressively the prefetcher issues.

The state is four quantized epoch measurements (prefetcher accuracy, OCP
accuracy, bandwidth usage, prefetch-induced pollution). Q-values live in
hashed planes whose partial values are summed; each cell is 8-bit signed
fixed point with 3 fractional bits. The reward compares consecutive epochs:
changes in metrics the agent influences minus changes in metrics driven by
the program itself.
"""

import enum
import heapq
import math
from dataclasses import dataclass, field, fields

from .hashing import SHIFT_CONSTANTS, mix64
from .pythia import ConfigError, _split

N_ACTIONS = 4
_BLOOM_SALTS = SHIFT_CONSTANTS[17:24]


class Selection(enum.IntEnum):
    NONE = 0
    OCP_ONLY = 1
    PREF_ONLY = 2
    BOTH = 3

    @property
    def prefetch(self):
        return self in (Selection.PREF_ONLY, Selection.BOTH)

    @property
    def ocp(self):
        return self in (Selection.OCP_ONLY, Selection.BOTH)


@dataclass(frozen=True)
class AthenaAction:
    selection: Selection
    degree: int = 0

    def __post_init__(self):
        if not self.selection.prefetch and self.degree != 0:
            raise ValueError("actions without prefetching carry degree 0")


@dataclass
class AthenaConfig:
    epoch_len: int = 2000
    alpha: float = 0.6
    gamma: float = 0.6
    epsilon: float = 0.0
    tau: float = 0.12
    lambda_cycle: float = 1.6
    lambda_llc_m: float = 0.0
    lambda_llc_t: float = 0.0
    lambda_load: float = 0.6
    lambda_mbr: float = 1.0
    planes: int = 8
    rows: int = 64
    q_bits: int = 8
    q_frac_bits: int = 3
    update_delay_cycles: int = 50
    bloom_bits: int = 4096
    bloom_hashes: int = 2
    feature_buckets: int = 8
    reward_mode: str = "relative"
    d_max: int = 4

    def validate(self):
        if self.epoch_len <= 0:
            raise ConfigError("athena.epoch_len", "must be positive")
        if self.rows <= 0 or self.rows & (self.rows - 1):
            raise ConfigError("athena.rows", "must be a power of two")
        if self.tau <= 0:
            raise ConfigError("athena.tau", "must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError("athena.alpha", "must satisfy 0 < alpha <= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("athena.gamma", "must satisfy 0 <= gamma < 1")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("athena.epsilon", "must lie in [0, 1]")
        if not 1 <= self.planes <= len(SHIFT_CONSTANTS):
            raise ConfigError("athena.planes", "out of range")
        if not 0 <= self.q_frac_bits < self.q_bits:
            raise ConfigError("athena.q_frac_bits", "must be below q_bits")
        if self.bloom_bits <= 0 or self.bloom_bits & (self.bloom_bits - 1):
            raise ConfigError("athena.bloom_bits", "must be a power of two")
        if not 1 <= self.bloom_hashes <= len(_BLOOM_SALTS):
            raise ConfigError("athena.bloom_hashes", "out of range")
        if self.feature_buckets < 1 or self.feature_buckets > 256:
            raise ConfigError("athena.feature_buckets", "must lie in 1..256")
        if self.reward_mode not in ("relative", "raw"):
            raise ConfigError("athena.reward_mode", "must be 'relative' or 'raw'")
        if self.update_delay_cycles < 0:
            raise ConfigError("athena.update_delay_cycles", "must be non-negative")
        if self.d_max < 0:
            raise ConfigError("athena.d_max", "must be non-negative")
        return self


# -- Bloom filter ---------------------------------------------------------------


class BloomFilter:
    def __init__(self, bits=4096, hashes=2):
        self.nbits = bits
        self.mask = bits - 1
        self.salts = _BLOOM_SALTS[:hashes]
        self.bits = 0
        self.inserted_count = 0

    def positions(self, addr):
        return [mix64(addr + s) & self.mask for s in self.salts]

    def insert(self, addr):
        for p in self.positions(addr):
            self.bits |= 1 << p
        self.inserted_count += 1

    def query(self, addr):
        b = self.bits
        return all(b >> p & 1 for p in self.positions(addr))

    def clear(self):
        self.bits = 0
        self.inserted_count = 0

    def __contains__(self, addr):
        return self.query(addr)


def bloom_insert(f, addr):
    f.insert(addr)


def bloom_query(f, addr):
    return f.query(addr)


def bloom_clear(f):
    f.clear()


# -- epoch telemetry --------------------------------------------------------------


@dataclass
class EpochStats:
    pref_issued: int = 0
    pref_useful: int = 0
    ocp_predictions: int = 0
    ocp_correct: int = 0
    bw_usage: float = 0.0
    pollution_misses: int = 0
    total_demand_misses: int = 0
    cycles: int = 0
    llc_misses: int = 0
    llc_miss_latency_sum: int = 0
    loads: int = 0
    mispredicted_branches: int = 0
    dram_demand: int = 0
    dram_prefetch: int = 0
    dram_hermes: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def prefetcher_accuracy(self):
        return min(1.0, self.pref_useful / self.pref_issued) if self.pref_issued else 0.0

    @property
    def ocp_accuracy(self):
        return self.ocp_correct / self.ocp_predictions if self.ocp_predictions else 0.0

    @property
    def pollution(self):
        return (self.pollution_misses / self.total_demand_misses
                if self.total_demand_misses else 0.0)

    def bandwidth_shares(self):
        """Prefetch/OCP/demand shares of DRAM traffic; reported, not part of the state."""
        total = self.dram_demand + self.dram_prefetch + self.dram_hermes
        if not total:
            return {"prefetch": 0.0, "ocp": 0.0, "demand": 0.0}
        return {"prefetch": self.dram_prefetch / total, "ocp": self.dram_hermes / total,
                "demand": self.dram_demand / total}


class EpochTelemetry:
    """Counters and Bloom trackers for the epoch in progress."""

    def __init__(self, bloom_bits=4096, bloom_hashes=2):
        self.accuracy_filter = BloomFilter(bloom_bits, bloom_hashes)
        self.pollution_filter = BloomFilter(bloom_bits, bloom_hashes)
        self.stats = EpochStats()
        self._latency = []

    def prefetch_issued(self, line):
        self.stats.pref_issued += 1
        self.accuracy_filter.insert(line)

    def demand(self, line):
        if self.stats.pref_issued and self.accuracy_filter.query(line):
            self.stats.pref_useful += 1

    def ocp_outcome(self, predicted, went_offchip):
        if predicted:
            self.stats.ocp_predictions += 1
            if went_offchip:
                self.stats.ocp_correct += 1

    def prefetch_evicted(self, line):
        self.pollution_filter.insert(line)

    def llc_miss(self, line):
        self.stats.total_demand_misses += 1
        if self.pollution_filter.inserted_count and self.pollution_filter.query(line):
            self.stats.pollution_misses += 1

    def miss_latency(self, completion, latency):
        heapq.heappush(self._latency, (completion, latency))

    def close(self, now, cycles, loads, mispredicted, bw_usage, dram=None):
        """Finish the epoch ending at ``now`` and start a fresh one."""
        st = self.stats
        st.cycles = cycles
        st.loads = loads
        st.mispredicted_branches = mispredicted
        st.bw_usage = bw_usage
        st.llc_misses = st.total_demand_misses
        lat = self._latency
        while lat and lat[0][0] <= now:
            st.llc_miss_latency_sum += heapq.heappop(lat)[1]
        if dram is not None:
            st.dram_demand, st.dram_prefetch, st.dram_hermes = dram
        self.stats = EpochStats()
        self.accuracy_filter.clear()
        self.pollution_filter.clear()
        return st


def quantize_state(stats, buckets=8):
    """Four features in [0, 1], each floored into ``buckets`` levels."""
    vals = (stats.prefetcher_accuracy, stats.ocp_accuracy, stats.bw_usage, stats.pollution)
    return tuple(min(buckets - 1, max(0, math.floor(v * buckets))) for v in vals)


# -- QVStore --------------------------------------------------------------------------


class AthenaQStore:
    """``planes`` hashed tables of ``rows`` x 4 partial Q-values (raw fixed point).

    Updates are queued with the cycle at which they take effect; every lookup
    first applies the updates that are due.
    """

    def __init__(self, planes=8, rows=64, q_bits=8, frac_bits=3, init=None, buckets=8):
        self.planes = planes
        self.rows = rows
        self.scale = 1 << frac_bits
        self.lo = -(1 << (q_bits - 1))
        self.hi = (1 << (q_bits - 1)) - 1
        self.bucket_bits = max(1, (buckets - 1).bit_length())
        if init is None:
            shares = _split(self.hi, planes)
        else:
            shares = _split(round(init * self.scale), planes)
        self.tables = [[[shares[p]] * N_ACTIONS for _ in range(rows)] for p in range(planes)]
        self.salts = SHIFT_CONSTANTS[:planes]
        self._pending = []
        self._seq = 0

    def state_rows(self, state):
        key = 0
        for v in state:
            key = (key << self.bucket_bits) | v
        return tuple(mix64(key + s) & (self.rows - 1) for s in self.salts)

    def sync(self, now):
        pend = self._pending
        while pend and (now is None or pend[0][0] <= now):
            _, _, rows, a, shares = heapq.heappop(pend)
            for p, (r, d) in enumerate(zip(rows, shares)):
                row = self.tables[p][r]
                row[a] = min(self.hi, max(self.lo, row[a] + d))

    def q_raw(self, state, action, now=None):
        self.sync(now)
        rows = self.state_rows(state)
        return sum(self.tables[p][r][action] for p, r in enumerate(rows))

    def q_values(self, state, now=None):
        self.sync(now)
        rows = self.state_rows(state)
        return [sum(self.tables[p][r][a] for p, r in enumerate(rows)) / self.scale
                for a in range(N_ACTIONS)]

    def schedule(self, state, action, delta_raw, effective):
        rows = self.state_rows(state)
        self._seq += 1
        heapq.heappush(self._pending, (effective, self._seq, rows, action,
                                       _split(delta_raw, self.planes)))

    def set_cell(self, plane, row, action, value):
        self.tables[plane][row][action] = round(value * self.scale)


def athena_q(qs, state, action, now=None):
    return qs.q_raw(state, action, now) / qs.scale


def prefetch_degree(delta_q, tau, d_max):
    """Degree from the confidence margin: ``floor(min(1, max(0, dQ) / tau) * d_max)``."""
    r = min(1.0, max(0.0, delta_q) / tau)
    return math.floor(r * d_max)


def select_coordination(qs, state, rng, config, now=None):
    """Epsilon-greedy coordination choice with Q-margin-driven prefetch degree."""
    q = qs.q_values(state, now)
    if config.epsilon > 0 and rng is not None and rng.random() < config.epsilon:
        a = rng.randrange(N_ACTIONS)
    else:
        a = q.index(max(q))
    sel = Selection(a)
    if not sel.prefetch:
        return AthenaAction(sel, 0)
    others = [q[i] for i in range(N_ACTIONS) if i != a]
    delta_q = q[a] - sum(others) / len(others)
    return AthenaAction(sel, prefetch_degree(delta_q, config.tau, config.d_max))


_LOWER_IS_BETTER = ("cycles", "llc_misses", "llc_miss_latency_sum", "loads", "mispredicted_branches")


def metric_changes(prev, cur, mode="relative"):
    """Improvement of each metric from ``prev`` to ``cur`` (positive = went down)."""
    out = {}
    for name in _LOWER_IS_BETTER:
        p, c = getattr(prev, name), getattr(cur, name)
        out[name] = (p - c) / max(p, 1) if mode == "relative" else float(p - c)
    return out


def compute_reward(prev, cur, config=None):
    cfg = config or AthenaConfig()
    d = metric_changes(prev, cur, cfg.reward_mode)
    corr = (cfg.lambda_cycle * d["cycles"] + cfg.lambda_llc_m * d["llc_misses"]
            + cfg.lambda_llc_t * d["llc_miss_latency_sum"])
    uncorr = cfg.lambda_load * d["loads"] + cfg.lambda_mbr * d["mispredicted_branches"]
    return corr - uncorr


def athena_update(qs, s1, a1, r, s2, a2, alpha, gamma, now=0, delay=50):
    """Queue the SARSA change to Q(s1, a1); returns the cycle it takes effect."""
    q1 = qs.q_raw(s1, a1, now) / qs.scale
    q2 = qs.q_raw(s2, a2, now) / qs.scale
    delta = alpha * (r + gamma * q2 - q1)
    effective = now + delay
    qs.schedule(s1, a1, round(delta * qs.scale), effective)
    return effective


def apply_action(action, prefetcher):
    """Set the prefetcher's degree for the next epoch; returns whether the OCP runs."""
    if prefetcher is not None:
        prefetcher.set_degree(min(action.degree, prefetcher.d_max) if action.selection.prefetch else 0)
    return action.selection.ocp


@dataclass
class EpochLogEntry:
    epoch: int
    state: tuple
    action: str
    degree: int
    reward: float


class Athena:
    """Epoch-level coordinator: call :meth:`end_epoch` at every epoch boundary."""

    def __init__(self, config=None, rng=None):
        self.config = (config or AthenaConfig()).validate()
        cfg = self.config
        self.rng = rng
        self.q = AthenaQStore(cfg.planes, cfg.rows, cfg.q_bits, cfg.q_frac_bits,
                              buckets=cfg.feature_buckets)
        self.telemetry = EpochTelemetry(cfg.bloom_bits, cfg.bloom_hashes)
        self.action = AthenaAction(Selection.BOTH, cfg.d_max)
        self.epoch = 0
        self.log = []
        self._prev = None

    def end_epoch(self, stats, now):
        cfg = self.config
        state = quantize_state(stats, cfg.feature_buckets)
        action = select_coordination(self.q, state, self.rng, cfg, now)
        reward = 0.0
        if self._prev is not None:
            pstats, pstate, paction = self._prev
            reward = compute_reward(pstats, stats, cfg)
            athena_update(self.q, pstate, int(paction.selection), reward, state,
                          int(action.selection), cfg.alpha, cfg.gamma, now,
                          cfg.update_delay_cycles)
        self._prev = (stats, state, action)
        self.log.append(EpochLogEntry(self.epoch, state, action.selection.name,
                                      action.degree, reward))
        self.epoch += 1
        self.action = action
        return action
