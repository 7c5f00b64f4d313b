"""Hermes: off-chip load prediction with a hashed perceptron (POPET) and
speculative requests sent straight to the memory controller.

A Hermes request never fills the caches. If a demand miss for the same line
reaches the memory controller while the request is outstanding, the demand
takes its data; otherwise the request is dropped when it returns.
"""

import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass

from .hashing import MASK64, SHIFT_CONSTANTS, mix64
from .memory import Level, RequestKind
from .pythia import ConfigError
from .trace import LINE_BYTES, LINES_PER_PAGE

LINE_SHIFT = 6
PAGE_SHIFT = 12
ISSUE_LATENCY_PRESETS = {"O": 6, "P": 18}
FEATURE_NAMES = ("pc^line_offset", "pc^byte_offset", "pc+first_access",
                 "line_offset+first_access", "last4_pcs")
_SALTS = SHIFT_CONSTANTS[12:17]


@dataclass
class PopetConfig:
    tau_act: int = -18
    t_n: int = -35
    t_p: int = 40
    weight_min: int = -16
    weight_max: int = 15
    table_rows: tuple = (1024, 1024, 1024, 128, 1024)
    issue_latency_cycles: int = 6
    page_buffer_entries: int = 64

    def validate(self):
        if not self.t_n < self.t_p:
            raise ConfigError("hermes.t_n", "negative training threshold must be below t_p")
        if not self.weight_min < 0 < self.weight_max:
            raise ConfigError("hermes.weight_min", "weight bounds must straddle zero")
        if len(self.table_rows) != 5:
            raise ConfigError("hermes.table_rows", "five feature tables are required")
        for r in self.table_rows:
            if r <= 0 or r & (r - 1):
                raise ConfigError("hermes.table_rows", "row counts must be powers of two")
        if self.issue_latency_cycles < 0:
            raise ConfigError("hermes.issue_latency_cycles", "must be non-negative")
        if self.page_buffer_entries < 1:
            raise ConfigError("hermes.page_buffer_entries", "must be positive")
        return self


class PageBuffer:
    """Recently touched lines of the last N pages, LRU-replaced."""

    def __init__(self, entries=64):
        self.entries = entries
        self.pages = OrderedDict()

    def touch(self, vaddr):
        """First-access bit for ``vaddr``'s line (read before the bitmap is set)."""
        page = vaddr >> PAGE_SHIFT
        bit = 1 << ((vaddr >> LINE_SHIFT) & (LINES_PER_PAGE - 1))
        bitmap = self.pages.get(page)
        if bitmap is None:
            if len(self.pages) >= self.entries:
                self.pages.popitem(last=False)
            self.pages[page] = bit
            return 1
        self.pages.move_to_end(page)
        if bitmap & bit:
            return 0
        self.pages[page] = bitmap | bit
        return 1


class WeightTables:
    def __init__(self, config=None):
        self.config = (config or PopetConfig()).validate()
        self.tables = [[0] * rows for rows in self.config.table_rows]

    def weights(self, indices):
        return [t[i] for t, i in zip(self.tables, indices)]


@dataclass
class LoadMetadata:
    indices: tuple
    w_sigma: int
    predicted_offchip: bool
    first_access: int = 0


def last4_fold(pcs):
    acc = 0
    for pc in pcs:
        acc = ((acc << 4) ^ pc) & MASK64
    return acc


def popet_features(pc, vaddr, page_buffer, last4_load_pcs, table_rows=(1024, 1024, 1024, 128, 1024)):
    """Row indices of the five weight tables, plus the first-access bit.

    Touches ``page_buffer`` (sets the line's bit, inserting the page if absent).
    """
    line_off = (vaddr >> LINE_SHIFT) & (LINES_PER_PAGE - 1)
    byte_off = vaddr & (LINE_BYTES - 1)
    first = page_buffer.touch(vaddr)
    raw = (
        pc ^ line_off,
        pc ^ byte_off,
        ((pc << 1) | first) & MASK64,
        (line_off << 1) | first,
        last4_fold(last4_load_pcs),
    )
    idx = tuple(mix64(v + s) & (rows - 1) for v, s, rows in zip(raw, _SALTS, table_rows))
    return idx, first


def popet_predict(tables, indices):
    """Sum the indexed weights; predict off-chip when the sum exceeds tau_act."""
    w_sigma = sum(t[i] for t, i in zip(tables.tables, indices))
    return {"predicted_offchip": w_sigma > tables.config.tau_act, "w_sigma": w_sigma}


def popet_train(tables, metadata, went_offchip):
    """Nudge each indexed weight toward the outcome unless W_sigma is saturated."""
    cfg = tables.config
    if not cfg.t_n < metadata.w_sigma < cfg.t_p:
        return False
    step = 1 if went_offchip else -1
    for t, i in zip(tables.tables, metadata.indices):
        w = t[i] + step
        t[i] = cfg.weight_max if w > cfg.weight_max else cfg.weight_min if w < cfg.weight_min else w
    return True


class Popet:
    """Stateful POPET: owns the weight tables, page buffer and load-PC history."""

    name = "popet"

    def __init__(self, config=None):
        self.weights = WeightTables(config)
        self.config = self.weights.config
        self.page_buffer = PageBuffer(self.config.page_buffer_entries)
        self.last_pcs = deque([0, 0, 0, 0], maxlen=4)

    def predict(self, pc, vaddr):
        idx, first = popet_features(pc, vaddr, self.page_buffer, self.last_pcs,
                                    self.config.table_rows)
        self.last_pcs.append(pc)
        out = popet_predict(self.weights, idx)
        return LoadMetadata(idx, out["w_sigma"], out["predicted_offchip"], first)

    def train(self, metadata, went_offchip):
        return popet_train(self.weights, metadata, went_offchip)


class OracleOcp:
    """Predicts from the live cache state; used as an upper-bound OCP."""

    name = "oracle"

    def __init__(self, hierarchy):
        self.hierarchy = hierarchy

    def predict(self, pc, vaddr):
        off = self.hierarchy.probe(vaddr) is Level.MEMORY
        return LoadMetadata((), 0, off)

    def train(self, metadata, went_offchip):
        return False


class HermesRequest:
    __slots__ = ("line", "ready", "claimed")

    def __init__(self, line, ready):
        self.line = line
        self.ready = ready
        self.claimed = False


class HermesDatapath:
    """Outstanding Hermes requests keyed by line."""

    def __init__(self, dram, issue_latency_cycles=6):
        self.dram = dram
        self.issue_latency_cycles = issue_latency_cycles
        self.inflight = {}
        self._heap = []
        self.issued = 0
        self.delivered = 0
        self.dropped = 0

    def issue(self, predicted_offchip, vaddr, now):
        """Send a Hermes request for ``vaddr``'s line if predicted; returns its ready cycle."""
        if not predicted_offchip:
            return None
        line = vaddr >> LINE_SHIFT
        if line in self.inflight:
            return None
        ready = self.dram.enqueue(line, RequestKind.HERMES, now + self.issue_latency_cycles)
        self.inflight[line] = HermesRequest(line, ready)
        heapq.heappush(self._heap, (ready, line))
        self.issued += 1
        return ready

    def claim(self, line, now):
        """A demand miss for ``line`` reached the controller at ``now``."""
        req = self.inflight.get(line)
        if req is None or req.ready < now:
            return None
        req.claimed = True
        return req.ready

    def retire(self, now):
        """Return requests whose data came back before ``now``; ``[(line, disposition)]``."""
        out = []
        heap = self._heap
        while heap and heap[0][0] < now:
            _, line = heapq.heappop(heap)
            out.append((line, hermes_return(self.inflight.pop(line), self)))
        return out


def hermes_return(request, datapath=None):
    """Disposition of a returned request: 'delivered' if a demand was waiting, else 'dropped'."""
    disposition = "delivered" if request.claimed else "dropped"
    if datapath is not None:
        if request.claimed:
            datapath.delivered += 1
        else:
            datapath.dropped += 1
    return disposition


def ocp_metrics(predictions, correct, true_offchip):
    """Accuracy and coverage; a zero denominator yields None (not applicable)."""
    return {
        "accuracy": correct / predictions if predictions else None,
        "coverage": correct / true_offchip if true_offchip else None,
    }
