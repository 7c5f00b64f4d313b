"""Three-level cache hierarchy, a bandwidth-accounted DRAM channel, and run metrics.

Cache contents evolve only with the order of accesses, never with timing: a
block is installed when its request is issued and carries the cycle at which
its data actually arrives (``ready``). An access that finds a block whose data
is still on the way waits for it. This keeps hit levels and final contents a
function of the access sequence alone, which is what lets Hermes be checked as
a timing-only mechanism.
"""

import bisect
import enum
import heapq
from collections import Counter
from dataclasses import dataclass, field, fields

from .trace import LINE_BYTES, Kind

LINE_SHIFT = 6


class Level(enum.IntEnum):
    L1 = 1
    L2 = 2
    LLC = 3
    MEMORY = 4


class RequestKind(enum.Enum):
    DEMAND = "demand"
    PREFETCH = "prefetch"
    HERMES = "hermes"


class MetricsError(ValueError):
    pass


class BaselineMissing(MetricsError):
    pass


class ZeroBaseline(MetricsError):
    pass


class Block:
    __slots__ = ("line", "dirty", "was_prefetch", "touched", "ready")

    def __init__(self, line, dirty=False, was_prefetch=False, ready=0):
        self.line = line
        self.dirty = dirty
        self.was_prefetch = was_prefetch
        self.touched = not was_prefetch
        self.ready = ready


class CacheLevel:
    """Set-associative cache with true LRU replacement, indexed by line number."""

    def __init__(self, name, sets, ways, round_trip_cycles):
        if sets <= 0 or sets & (sets - 1):
            raise ValueError(f"{name}: sets must be a power of two, got {sets}")
        if ways <= 0:
            raise ValueError(f"{name}: ways must be positive")
        self.name = name
        self.sets = sets
        self.ways = ways
        self.round_trip_cycles = round_trip_cycles
        self._mask = sets - 1
        self._order = [[] for _ in range(sets)]  # LRU first, MRU last
        self.blocks = {}

    @classmethod
    def from_size(cls, name, size_bytes, ways, round_trip_cycles):
        return cls(name, size_bytes // (LINE_BYTES * ways), ways, round_trip_cycles)

    def __contains__(self, line):
        return line in self.blocks

    def lookup(self, line):
        return self.blocks.get(line)

    def touch(self, line):
        order = self._order[line & self._mask]
        order.remove(line)
        order.append(line)

    def victim(self, line):
        """Line that inserting ``line`` would evict, or None."""
        order = self._order[line & self._mask]
        if line in self.blocks or len(order) < self.ways:
            return None
        return order[0]

    def insert(self, line, was_prefetch=False, ready=0, dirty=False):
        """Install ``line`` as MRU; returns the evicted Block, if any."""
        blk = self.blocks.get(line)
        if blk is not None:
            self.touch(line)
            blk.ready = max(blk.ready, ready)
            blk.dirty = blk.dirty or dirty
            return None
        order = self._order[line & self._mask]
        evicted = None
        if len(order) >= self.ways:
            evicted = self.blocks.pop(order.pop(0))
        order.append(line)
        self.blocks[line] = Block(line, dirty, was_prefetch, ready)
        return evicted

    def lru_order(self, set_index):
        return tuple(self._order[set_index])

    def contents(self):
        return frozenset(self.blocks)


class DramChannel:
    """Single serial channel: fixed device latency plus per-line occupancy.

    Each accepted request occupies the bus for ``64 / bytes_per_cycle``
    cycles starting at ``max(now, busy_until)``; transfers never overlap, so
    bytes moved before any cycle follow from a sorted list of start cycles.
    """

    def __init__(self, bytes_per_cycle=8, access_latency_cycles=200):
        if bytes_per_cycle <= 0 or LINE_BYTES % bytes_per_cycle:
            raise ValueError("bytes_per_cycle must divide 64")
        self.bytes_per_cycle = bytes_per_cycle
        self.access_latency_cycles = access_latency_cycles
        self.occupancy = LINE_BYTES // bytes_per_cycle
        self.busy_until = 0
        self.requests_by_kind = Counter()
        self.inflight = {}
        self._expiry = []
        self._starts = []
        self._dropped = 0

    @property
    def accepted(self):
        return self._dropped + len(self._starts)

    @property
    def bytes_granted(self):
        return LINE_BYTES * self.accepted

    def enqueue(self, line, kind, now):
        start = max(now, self.busy_until)
        ready = start + self.access_latency_cycles
        self.busy_until = start + self.occupancy
        self._starts.append(start)
        self.requests_by_kind[kind] += 1
        self.inflight[line] = (ready, kind)
        heapq.heappush(self._expiry, (ready, line))
        return ready

    def retire(self, now):
        """Forget completed requests; returns ``[(line, kind)]`` that finished by ``now``."""
        done = []
        exp = self._expiry
        while exp and exp[0][0] <= now:
            ready, line = heapq.heappop(exp)
            cur = self.inflight.get(line)
            if cur is not None and cur[0] == ready:
                del self.inflight[line]
                done.append((line, cur[1]))
        return done

    def bytes_before(self, cycle):
        """Bytes transferred in cycles strictly before ``cycle``."""
        i = bisect.bisect_right(self._starts, cycle - 1)
        if i == 0:
            return LINE_BYTES * self._dropped
        partial = min(cycle - self._starts[i - 1], self.occupancy) * self.bytes_per_cycle
        return LINE_BYTES * (self._dropped + i - 1) + partial

    def bandwidth_usage(self, now, window=4096):
        """Fraction of peak bandwidth used over cycles ``(now - window, now]``."""
        if window <= 0:
            raise ValueError("window must be positive")
        moved = self.bytes_before(now + 1) - self.bytes_before(now - window + 1)
        return min(1.0, max(0.0, moved / (window * self.bytes_per_cycle)))

    def prune(self, before):
        """Drop bookkeeping for transfers that ended before cycle ``before``."""
        i = bisect.bisect_left(self._starts, before - self.occupancy)
        if i > 1:
            i -= 1
            self._dropped += i
            del self._starts[:i]


@dataclass
class AccessResult:
    hit_level: Level
    completion_cycle: int
    served_by_hermes: bool = False
    prefetch_hit: bool = False


@dataclass
class MetricsLedger:
    demand_accesses: int = 0
    loads: int = 0
    stores: int = 0
    l1_hits: int = 0
    l2_hits: int = 0
    llc_hits: int = 0
    demand_misses_llc: int = 0
    llc_miss_latency_sum: int = 0
    prefetch_issued: int = 0
    prefetch_dram: int = 0
    prefetch_useful: int = 0
    prefetch_unused: int = 0
    demand_hits_on_prefetch: int = 0
    hermes_served: int = 0
    writebacks: int = 0

    def snapshot(self):
        return MetricsLedger(**{f.name: getattr(self, f.name) for f in fields(self)})

    def __sub__(self, other):
        return MetricsLedger(**{f.name: getattr(self, f.name) - getattr(other, f.name)
                                for f in fields(self)})

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def coverage_and_overprediction(ledger, baseline_llc_misses=None):
    """Coverage and overprediction against a paired no-prefetch baseline.

    ``baseline_llc_misses`` may be an int or the baseline run's ledger.
    """
    if baseline_llc_misses is None:
        raise BaselineMissing("coverage needs the LLC misses of a no-prefetch run")
    if isinstance(baseline_llc_misses, MetricsLedger):
        baseline_llc_misses = baseline_llc_misses.demand_misses_llc
    if baseline_llc_misses == 0:
        raise ZeroBaseline("baseline run had no LLC demand misses")
    coverage = (baseline_llc_misses - ledger.demand_misses_llc) / baseline_llc_misses
    overprediction = ledger.prefetch_unused / baseline_llc_misses
    return {"coverage": coverage, "overprediction": overprediction}


@dataclass
class MemoryConfig:
    l1_size: int = 48 * 1024
    l1_ways: int = 12
    l1_latency: int = 5
    l2_size: int = 1280 * 1024
    l2_ways: int = 20
    l2_latency: int = 15
    llc_size: int = 3 * 1024 * 1024
    llc_ways: int = 12
    llc_latency: int = 55
    bytes_per_cycle: int = 8
    dram_latency: int = 200
    bw_window: int = 4096


class MemoryHierarchy:
    """L1/L2/LLC plus DRAM; demand fills go to all three levels, prefetches to L2/LLC.

    Hooks (all optional, called with a line number):
      ``on_prefetch_evict`` - an LLC block displaced by a prefetch fill,
      ``on_llc_miss`` - a demand access that missed every level.
    """

    def __init__(self, config=None):
        cfg = config or MemoryConfig()
        self.config = cfg
        self.l1 = CacheLevel.from_size("L1", cfg.l1_size, cfg.l1_ways, cfg.l1_latency)
        self.l2 = CacheLevel.from_size("L2", cfg.l2_size, cfg.l2_ways, cfg.l2_latency)
        self.llc = CacheLevel.from_size("LLC", cfg.llc_size, cfg.llc_ways, cfg.llc_latency)
        self.levels = {Level.L1: self.l1, Level.L2: self.l2, Level.LLC: self.llc}
        self.dram = DramChannel(cfg.bytes_per_cycle, cfg.dram_latency)
        self.ledger = MetricsLedger()
        self.pending_prefetch = set()
        self.on_prefetch_evict = None
        self.on_llc_miss = None
        self._fills = []

    # -- internal ---------------------------------------------------------

    def _evicted(self, blk, level):
        if blk is None:
            return
        line = blk.line
        if blk.dirty:
            self.ledger.writebacks += 1
        if line in self.pending_prefetch:
            other = self.llc if level is self.l2 else self.l2
            if line not in other.blocks:
                self.pending_prefetch.discard(line)
                self.ledger.prefetch_unused += 1

    def _fill(self, level, line, ready, was_prefetch=False, dirty=False):
        blk = level.insert(line, was_prefetch=was_prefetch, ready=ready, dirty=dirty)
        self._evicted(blk, level)
        return blk

    # -- demand path ------------------------------------------------------

    def demand_access(self, addr, kind=Kind.LOAD, now=0, hermes=None):
        line = addr >> LINE_SHIFT
        led = self.ledger
        led.demand_accesses += 1
        store = kind is Kind.STORE
        if store:
            led.stores += 1
        else:
            led.loads += 1

        prefetch_hit = False
        if line in self.pending_prefetch:
            self.pending_prefetch.discard(line)
            led.prefetch_useful += 1
            prefetch_hit = True

        for lvl, cache in ((Level.L1, self.l1), (Level.L2, self.l2), (Level.LLC, self.llc)):
            blk = cache.blocks.get(line)
            if blk is None:
                continue
            cache.touch(line)
            done = max(now + cache.round_trip_cycles, blk.ready)
            if blk.was_prefetch:
                blk.was_prefetch = False
                led.demand_hits_on_prefetch += 1
                if lvl is Level.L2:
                    lb = self.llc.blocks.get(line)
                    if lb is not None:
                        lb.was_prefetch = False
            blk.touched = True
            if lvl is Level.L1:
                led.l1_hits += 1
                blk.dirty = blk.dirty or store
            else:
                if lvl is Level.L2:
                    led.l2_hits += 1
                else:
                    led.llc_hits += 1
                    self._fill(self.l2, line, done)
                self._fill(self.l1, line, done, dirty=store)
            return AccessResult(lvl, done, False, prefetch_hit)

        led.demand_misses_llc += 1
        if self.on_llc_miss is not None:
            self.on_llc_miss(line)
        served = False
        ready = hermes.claim(line, now) if hermes is not None else None
        if ready is not None:
            done = max(ready, now)
            served = True
            led.hermes_served += 1
        else:
            done = self.dram.enqueue(line, RequestKind.DEMAND, now) + self.llc.round_trip_cycles
        led.llc_miss_latency_sum += done - now
        self._fill(self.llc, line, done)
        self._fill(self.l2, line, done)
        self._fill(self.l1, line, done, dirty=store)
        return AccessResult(Level.MEMORY, done, served, prefetch_hit)

    # -- prefetch path ----------------------------------------------------

    def prefetch_fill(self, addr, now, targets=(Level.L2, Level.LLC)):
        """Bring ``addr``'s line into ``targets``; returns the cycle its data lands."""
        assert Level.L1 not in targets, "prefetches never fill L1"
        line = addr >> LINE_SHIFT
        self.ledger.prefetch_issued += 1
        if line in self.l2.blocks and line in self.llc.blocks and targets == (Level.L2, Level.LLC):
            return now
        caches = [self.levels[t] for t in targets]
        missing = [c for c in caches if line not in c.blocks]
        if not missing:
            return now
        onchip = None
        for c in (self.l1, self.l2, self.llc):
            blk = c.blocks.get(line)
            if blk is not None:
                onchip = max(blk.ready, now + c.round_trip_cycles)
                break
        if onchip is not None:
            ready = onchip
        else:
            ready = self.dram.enqueue(line, RequestKind.PREFETCH, now)
            self.ledger.prefetch_dram += 1
            self.pending_prefetch.add(line)
        for c in sorted(missing, key=lambda c: -c.round_trip_cycles):
            if c is self.llc and self.on_prefetch_evict is not None:
                victim = c.victim(line)
                if victim is not None:
                    self.on_prefetch_evict(victim)
            self._fill(c, line, ready, was_prefetch=True)
        heapq.heappush(self._fills, (ready, line))
        return ready

    def pop_fills(self, now):
        """Lines whose prefetch data arrived by cycle ``now``."""
        out = []
        fills = self._fills
        while fills and fills[0][0] <= now:
            out.append(heapq.heappop(fills)[1])
        return out

    # -- inspection -------------------------------------------------------

    def probe(self, addr):
        """Level that would serve ``addr`` right now, without touching any state."""
        line = addr >> LINE_SHIFT
        for lvl, cache in self.levels.items():
            if line in cache.blocks:
                return lvl
        return Level.MEMORY

    def contents(self):
        return {lvl.name: cache.contents() for lvl, cache in self.levels.items()}

    def finalize(self):
        """Count still-untouched prefetched lines as unused; call once at run end."""
        n = len(self.pending_prefetch)
        self.ledger.prefetch_unused += n
        self.pending_prefetch.clear()
        return n
