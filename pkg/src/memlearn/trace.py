"""Trace records, the text trace format, and synthetic workload generators.

A trace file holds one record per line, seven whitespace-separated tokens::

    <seq:dec> <pc:hex> <kind:L|S|B|O> <vaddr:hex> <size:dec> <taken:T|N|-> <mispred:M|C|->

Lines starting with ``#`` are comments. Paths ending in ``.gz`` are read and
written through gzip.
"""

import enum
import gzip
import re
from dataclasses import dataclass

import numpy as np

LINE_BYTES = 64
PAGE_BYTES = 4096
LINES_PER_PAGE = PAGE_BYTES // LINE_BYTES

_HEX = re.compile(r"[0-9a-fA-F]+\Z")
_DEC = re.compile(r"[0-9]+\Z")


class TraceError(Exception):
    pass


class MalformedRecord(TraceError, ValueError):
    def __init__(self, position, reason):
        self.position = position
        self.reason = reason
        where = f"line {position}: " if position is not None else ""
        super().__init__(f"{where}{reason}")


class TraceIOError(TraceError, OSError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"{path}: {reason}")


class InvalidSpec(TraceError, ValueError):
    pass


class Kind(enum.Enum):
    LOAD = "L"
    STORE = "S"
    BRANCH = "B"
    OTHER = "O"


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    pc: int
    kind: Kind
    vaddr: int = 0
    size: int = 0
    taken: bool = False
    mispredicted: bool = False

    @property
    def is_memory(self):
        return self.kind is Kind.LOAD or self.kind is Kind.STORE


def _crosses_line(vaddr, size):
    return size > 0 and (vaddr // LINE_BYTES) != ((vaddr + size - 1) // LINE_BYTES)


def parse_trace_record(line, position=None):
    """Decode one record line; raises :class:`MalformedRecord` on any defect."""
    tokens = line.split()
    if len(tokens) != 7:
        raise MalformedRecord(position, f"expected 7 fields, got {len(tokens)}")
    seq_t, pc_t, kind_t, addr_t, size_t, taken_t, mis_t = tokens
    if not _DEC.match(seq_t):
        raise MalformedRecord(position, f"bad seq {seq_t!r}")
    if not _HEX.match(pc_t):
        raise MalformedRecord(position, f"non-hex pc {pc_t!r}")
    if not _HEX.match(addr_t):
        raise MalformedRecord(position, f"non-hex address {addr_t!r}")
    if not _DEC.match(size_t):
        raise MalformedRecord(position, f"bad size {size_t!r}")
    try:
        kind = Kind(kind_t)
    except ValueError:
        raise MalformedRecord(position, f"unknown kind {kind_t!r}") from None
    seq, pc, vaddr, size = int(seq_t), int(pc_t, 16), int(addr_t, 16), int(size_t)
    if pc >> 64 or vaddr >> 64:
        raise MalformedRecord(position, "value exceeds 64 bits")

    if kind is Kind.BRANCH:
        if vaddr != 0 or size != 0:
            raise MalformedRecord(position, "branch records carry vaddr=0 and size=0")
        if taken_t not in ("T", "N") or mis_t not in ("M", "C"):
            raise MalformedRecord(position, "branch needs taken T|N and mispred M|C")
        return TraceRecord(seq, pc, kind, 0, 0, taken_t == "T", mis_t == "M")

    if taken_t != "-" or mis_t != "-":
        raise MalformedRecord(position, "taken/mispred apply to branches only")
    if kind is Kind.OTHER:
        if size > LINE_BYTES:
            raise MalformedRecord(position, f"size {size} out of range 0-64")
    elif not 1 <= size <= LINE_BYTES:
        raise MalformedRecord(position, f"size {size} out of range 1-64")
    if _crosses_line(vaddr, size):
        raise MalformedRecord(position, f"access {vaddr:#x}+{size} crosses a cacheline")
    return TraceRecord(seq, pc, kind, vaddr, size)


def format_trace_record(rec):
    if rec.kind is Kind.BRANCH:
        taken = "T" if rec.taken else "N"
        mis = "M" if rec.mispredicted else "C"
    else:
        taken = mis = "-"
    return f"{rec.seq} {rec.pc:x} {rec.kind.value} {rec.vaddr:x} {rec.size} {taken} {mis}"


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def load_trace(path):
    """Yield records from ``path`` in file order, one line at a time."""
    try:
        fh = _open_text(path, "r")
    except OSError as exc:
        raise TraceIOError(path, exc.strerror or str(exc)) from exc
    last_seq = None
    with fh:
        lineno = 0
        while True:
            try:
                raw = fh.readline()
            except (OSError, EOFError, UnicodeDecodeError) as exc:
                raise TraceIOError(path, str(exc)) from exc
            if not raw:
                return
            lineno += 1
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            rec = parse_trace_record(text, position=lineno)
            if last_seq is not None and rec.seq <= last_seq:
                raise MalformedRecord(lineno, f"seq {rec.seq} does not increase")
            last_seq = rec.seq
            yield rec


def write_trace(records, path):
    n = 0
    try:
        with _open_text(path, "w") as fh:
            for rec in records:
                fh.write(format_trace_record(rec))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise TraceIOError(path, exc.strerror or str(exc)) from exc
    return n


# ---------------------------------------------------------------------------
# synthetic workloads


class Pattern(enum.Enum):
    STREAM = "stream"
    STRIDE = "stride"
    POINTER_CHASE = "pointer_chase"
    RANDOM = "random"
    PHASE_SWITCH = "phase_switch"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a generated workload.

    ``pages`` is the number of concurrently walked pages for Stride/Stream
    (each walk moves on to a fresh page when it leaves its own) and the
    footprint in pages for PointerChase/Random. Non-memory records are
    Other instructions, with every ``branch_period``-th one a branch; one
    branch in each run of ``round(1 / mispredict_rate)`` is mispredicted.
    """

    generator: Pattern
    length: int
    stride_lines: int = 1
    pages: int = 1
    load_fraction: float = 1.0
    phase_len: int = 20000
    seed: int = 0
    branch_period: int = 4
    mispredict_rate: float = 0.05
    access_size: int = 8

    def validate(self):
        if self.length <= 0:
            raise InvalidSpec("length must be positive")
        if not 0.0 <= self.load_fraction <= 1.0:
            raise InvalidSpec("load_fraction must lie in [0, 1]")
        if self.pages < 1:
            raise InvalidSpec("pages must be at least 1")
        if self.generator in (Pattern.STRIDE, Pattern.STREAM, Pattern.PHASE_SWITCH):
            if self.stride_lines == 0 or abs(self.stride_lines) >= LINES_PER_PAGE:
                raise InvalidSpec("stride_lines must be nonzero and within a page")
        if self.generator is Pattern.PHASE_SWITCH and self.phase_len <= 0:
            raise InvalidSpec("phase_len must be positive")
        if self.branch_period < 1:
            raise InvalidSpec("branch_period must be at least 1")
        if not 0.0 <= self.mispredict_rate <= 1.0:
            raise InvalidSpec("mispredict_rate must lie in [0, 1]")
        if self.access_size not in (1, 2, 4, 8, 16, 32, 64):
            raise InvalidSpec("access_size must be a power of two up to 64")
        return self


STRIDE_REGION = 0x10000000
STREAM_REGION = 0x20000000
CHASE_REGION = 0x40000000
RANDOM_REGION = 0x60000000
CODE_BASE = 0x400000


class _StrideWalk:
    """Round-robin page walks; a walk leaving its page restarts in a fresh one."""

    def __init__(self, stride, streams, region, pc_base, contiguous=False):
        self.stride = stride
        self.region = region
        self.pcs = [pc_base + 0x40 * s for s in range(streams)]
        start = 0 if stride > 0 else LINES_PER_PAGE - 1
        self.contiguous = contiguous
        if contiguous:
            # each stream owns a disjoint 2^24-line region
            self.lines = [s << 24 for s in range(streams)]
        else:
            self.lines = [s * LINES_PER_PAGE + start for s in range(streams)]
        self.next_page = streams
        self.turn = 0

    def next(self):
        s = self.turn
        self.turn = (s + 1) % len(self.lines)
        line = self.lines[s]
        nxt = line + self.stride
        if not self.contiguous and nxt // LINES_PER_PAGE != line // LINES_PER_PAGE:
            start = 0 if self.stride > 0 else LINES_PER_PAGE - 1
            nxt = self.next_page * LINES_PER_PAGE + start
            self.next_page += 1
        self.lines[s] = nxt
        return self.pcs[s], self.region + line * LINE_BYTES


class _ChaseWalk:
    def __init__(self, pages, gen, pc, region, size):
        n = pages * LINES_PER_PAGE
        self.order = gen.permutation(n).tolist()
        self.offsets = (gen.integers(0, LINE_BYTES // size, n) * size).tolist()
        self.pos = 0
        self.pc = pc
        self.region = region

    def next(self):
        line = self.order[self.pos]
        self.pos = (self.pos + 1) % len(self.order)
        return self.pc, self.region + line * LINE_BYTES + self.offsets[line]


class _RandomWalk:
    def __init__(self, pages, gen, pc, region, size):
        self.gen = gen
        self.n = pages * LINES_PER_PAGE
        self.slots = LINE_BYTES // size
        self.size = size
        self.pc = pc
        self.region = region
        self._buf = []

    def next(self):
        if not self._buf:
            lines = self.gen.integers(0, self.n, 4096)
            offs = self.gen.integers(0, self.slots, 4096) * self.size
            self._buf = list(zip(lines.tolist(), offs.tolist()))[::-1]
        line, off = self._buf.pop()
        return self.pc, self.region + line * LINE_BYTES + off


def generate(spec):
    """Yield the records of a synthetic workload; a pure function of ``spec``."""
    spec.validate()
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed & ((1 << 64) - 1))))
    size = spec.access_size
    kind = spec.generator

    if kind is Pattern.STRIDE:
        walks = [_StrideWalk(spec.stride_lines, spec.pages, STRIDE_REGION, CODE_BASE + 0x1000)]
    elif kind is Pattern.STREAM:
        walks = [_StrideWalk(spec.stride_lines, spec.pages, STREAM_REGION, CODE_BASE + 0x1800,
                             contiguous=True)]
    elif kind is Pattern.POINTER_CHASE:
        walks = [_ChaseWalk(spec.pages, gen, CODE_BASE + 0x2000, CHASE_REGION, size)]
    elif kind is Pattern.RANDOM:
        walks = [_RandomWalk(spec.pages, gen, CODE_BASE + 0x3000, RANDOM_REGION, size)]
    elif kind is Pattern.PHASE_SWITCH:
        walks = [_StrideWalk(spec.stride_lines, 1, STRIDE_REGION, CODE_BASE + 0x1000),
                 _ChaseWalk(spec.pages, gen, CODE_BASE + 0x2000, CHASE_REGION, size)]
    else:  # pragma: no cover
        raise InvalidSpec(f"unknown generator {kind}")

    mis_block = round(1.0 / spec.mispredict_rate) if spec.mispredict_rate > 0 else 0
    branch_gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed & ((1 << 64) - 1), 1])))
    mis_slot = -1
    branches = 0
    nonmem = 0
    f = spec.load_fraction

    for i in range(spec.length):
        if int((i + 1) * f) > int(i * f):
            walk = walks[(i // spec.phase_len) % len(walks)] if len(walks) > 1 else walks[0]
            pc, vaddr = walk.next()
            yield TraceRecord(i, pc, Kind.LOAD, vaddr, size)
            continue
        pc = CODE_BASE + 4 * (i % 64)
        nonmem += 1
        if nonmem % spec.branch_period:
            yield TraceRecord(i, pc, Kind.OTHER)
            continue
        if mis_block and branches % mis_block == 0:
            mis_slot = branches + int(branch_gen.integers(0, mis_block))
        taken = bool(branch_gen.integers(0, 2))
        mispred = mis_block > 0 and branches == mis_slot
        branches += 1
        yield TraceRecord(i, pc, Kind.BRANCH, 0, 0, taken, mispred)
