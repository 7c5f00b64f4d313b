"""Prefetcher port and the baseline prefetchers.

Every prefetcher keeps its requests inside the 4 KB page of the triggering
access and emits at most ``degree`` lines per trigger.
"""

from dataclasses import dataclass, field

from .trace import LINES_PER_PAGE

D_MAX = 4
LINE_SHIFT = 6
PAGE_SHIFT = 12


@dataclass
class PrefetchDecision:
    addrs: list = field(default_factory=list)
    trigger_pc: int = 0
    trigger_addr: int = 0


def same_page(a, b):
    return a >> PAGE_SHIFT == b >> PAGE_SHIFT


def _in_page_lines(line, offsets):
    page = line // LINES_PER_PAGE
    out = []
    for off in offsets:
        t = line + off
        if t // LINES_PER_PAGE != page:
            break
        out.append(t << LINE_SHIFT)
    return out


class Prefetcher:
    """Port used by the harness and by Athena's degree control."""

    name = "base"

    def __init__(self, d_max=D_MAX):
        self.d_max = d_max
        self.degree = d_max

    def set_degree(self, d):
        if not 0 <= d <= self.d_max:
            raise ValueError(f"degree {d} outside 0..{self.d_max}")
        self.degree = d

    def on_demand(self, pc, addr, hit_level, now):
        return PrefetchDecision([], pc, addr)

    def on_fill(self, addr, now):
        pass


class NoPrefetcher(Prefetcher):
    name = "none"


# -- stride -----------------------------------------------------------------


class StrideEntry:
    __slots__ = ("last_line", "stride", "confidence")

    def __init__(self, line):
        self.last_line = line
        self.stride = 0
        self.confidence = 0


def stride_on_demand(state, pc, addr, degree, now=0):
    """PC-indexed stride detection with a 2-bit confidence counter.

    The first stride seen for a PC counts as one observation; a repeat raises
    confidence (saturating at 3) and a different stride resets it to 0.
    Prefetches issue once confidence reaches 2.
    """
    line = addr >> LINE_SHIFT
    entry = state.get(pc)
    if entry is None:
        state[pc] = StrideEntry(line)
        return PrefetchDecision([], pc, addr)
    delta = line - entry.last_line
    entry.last_line = line
    if delta == 0:
        return PrefetchDecision([], pc, addr)
    if entry.stride == 0:
        entry.stride = delta
        entry.confidence = 1
    elif delta == entry.stride:
        entry.confidence = min(3, entry.confidence + 1)
    else:
        entry.stride = delta
        entry.confidence = 0
    if entry.confidence < 2 or degree <= 0:
        return PrefetchDecision([], pc, addr)
    offsets = [k * entry.stride for k in range(1, degree + 1)]
    return PrefetchDecision(_in_page_lines(line, offsets), pc, addr)


class StridePrefetcher(Prefetcher):
    name = "stride"

    def __init__(self, d_max=D_MAX):
        super().__init__(d_max)
        self.table = {}

    def on_demand(self, pc, addr, hit_level, now):
        return stride_on_demand(self.table, pc, addr, self.degree, now)


# -- next-line ----------------------------------------------------------------


def nextline_on_demand(pc, addr, degree):
    line = addr >> LINE_SHIFT
    return PrefetchDecision(_in_page_lines(line, range(1, degree + 1)), pc, addr)


class NextLinePrefetcher(Prefetcher):
    name = "nextline"

    def on_demand(self, pc, addr, hit_level, now):
        return nextline_on_demand(pc, addr, self.degree)


# -- adversarial test double --------------------------------------------------


def adversarial_on_demand(rng, addr, degree, pc=0):
    """``degree`` random lines of the trigger's page, never the trigger's own line."""
    line = addr >> LINE_SHIFT
    base = line - line % LINES_PER_PAGE
    own = line % LINES_PER_PAGE
    picks = []
    while len(picks) < degree:
        off = (own + 1 + rng.randrange(LINES_PER_PAGE - 1)) % LINES_PER_PAGE
        if off not in picks:
            picks.append(off)
    return PrefetchDecision([(base + o) << LINE_SHIFT for o in picks], pc, addr)


class AdversarialPrefetcher(Prefetcher):
    name = "adversarial"

    def __init__(self, rng, d_max=D_MAX):
        super().__init__(d_max)
        self.rng = rng

    def on_demand(self, pc, addr, hit_level, now):
        return adversarial_on_demand(self.rng, addr, self.degree, pc)
