"""Configuration, simulation driver, paired baseline runs and reports.

The core clock is deliberately simple: every trace record takes one cycle to
issue; a load cannot issue while ``window`` loads are outstanding, and no
record issues while a load ``rob_records`` or more records older is still
waiting for data. Loads complete in order.
"""

import csv
import dataclasses
import hashlib
import io
import json
import os
import struct
import time
from collections import Counter, deque
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .athena import Athena, AthenaConfig, apply_action
from .hermes import ISSUE_LATENCY_PRESETS, HermesDatapath, OracleOcp, Popet, PopetConfig, ocp_metrics
from .memory import Level, MemoryConfig, MemoryHierarchy, RequestKind, coverage_and_overprediction
from .prefetch import (D_MAX, LINE_SHIFT, AdversarialPrefetcher, NextLinePrefetcher, NoPrefetcher,
                       StridePrefetcher)
from .pythia import ConfigError, Pythia, PythiaConfig
from .rng import Stream, substream
from .trace import Kind, Pattern, SyntheticSpec, generate, load_trace

PREFETCHERS = ("none", "pythia", "stride", "nextline", "adversarial")
REPORT_FORMATS = ("json", "csv")
BW_BINS = 10


@dataclass
class CoreConfig:
    window: int = 16
    rob_records: int = 64


@dataclass
class HermesSettings:
    enabled: bool = False
    predictor: str = "popet"
    variant: str = "O"
    popet: PopetConfig = None

    def __post_init__(self):
        # the variant picks the issue latency unless a predictor config is given
        if self.popet is None:
            self.popet = PopetConfig(issue_latency_cycles=ISSUE_LATENCY_PRESETS.get(self.variant, 6))


@dataclass
class SimConfig:
    seed: int = 0
    trace_path: str = None
    synthetic: SyntheticSpec = None
    warmup_records: int = None
    warmup_fraction: float = 0.1
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    core: CoreConfig = field(default_factory=CoreConfig)
    prefetcher: str = "none"
    prefetch_degree: int = D_MAX
    pythia: PythiaConfig = field(default_factory=PythiaConfig)
    hermes: HermesSettings = field(default_factory=HermesSettings)
    athena_enabled: bool = False
    athena: AthenaConfig = field(default_factory=AthenaConfig)
    report_format: str = "json"
    athena_log: str = None

    def validate(self, path=None):
        def err(key, reason):
            return ConfigError(key, reason, path)

        if self.prefetcher not in PREFETCHERS:
            raise err("prefetcher.kind", f"must be one of {', '.join(PREFETCHERS)}")
        if self.prefetch_degree < 0:
            raise err("prefetcher.degree", "must be non-negative")
        if self.core.window < 1:
            raise err("core.window", "must be positive")
        if self.core.rob_records < 1:
            raise err("core.rob_records", "must be positive")
        if self.warmup_records is not None and self.warmup_records < 0:
            raise err("warmup_records", "must be non-negative")
        if not 0 <= self.warmup_fraction < 1:
            raise err("warmup_fraction", "must lie in [0, 1)")
        if self.report_format not in REPORT_FORMATS:
            raise err("report.format", "must be 'json' or 'csv'")
        if self.hermes.predictor not in ("popet", "oracle"):
            raise err("hermes.predictor", "must be 'popet' or 'oracle'")
        if self.hermes.variant not in ISSUE_LATENCY_PRESETS:
            raise err("hermes.variant", "must be 'O' or 'P'")
        if self.trace_path is not None and self.synthetic is not None:
            raise err("trace", "give either a path or a generator, not both")
        if self.athena_enabled:
            if self.prefetcher == "none":
                raise err("athena.enabled", "Athena needs a prefetcher to coordinate")
            if not self.hermes.enabled:
                raise err("athena.enabled", "Athena needs Hermes to coordinate")
        for key, sub in (("pythia", self.pythia), ("hermes", self.hermes.popet),
                         ("athena", self.athena)):
            try:
                sub.validate()
            except ConfigError as e:
                raise ConfigError(e.key, e.reason, path) from None
        if self.synthetic is not None:
            try:
                self.synthetic.validate()
            except ValueError as e:
                raise err("trace", str(e)) from None
        for f in dataclasses.fields(MemoryConfig):
            if getattr(self.memory, f.name) <= 0:
                raise err(f"memory.{f.name}", "must be positive")
        return self

    def without_mechanisms(self):
        return dataclasses.replace(self, prefetcher="none",
                                   hermes=dataclasses.replace(self.hermes, enabled=False),
                                   athena_enabled=False, athena_log=None)

    def issue_latency(self):
        return self.hermes.popet.issue_latency_cycles


# -- config loading ---------------------------------------------------------------------


def _coerce(key, value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "expected a boolean", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string", path)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(key, "expected a list of integers", path)
        return tuple(value)
    return value


def _fill(obj, table, section, path, skip=()):
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in table.items():
        if k in skip:
            continue
        if k not in names or dataclasses.is_dataclass(getattr(obj, k)):
            raise ConfigError(f"{section}.{k}", "unknown key", path)
        changes[k] = _coerce(f"{section}.{k}", v, getattr(obj, k), path)
    return dataclasses.replace(obj, **changes)


_TOP_KEYS = {"seed", "warmup_records", "warmup_fraction"}
_SECTIONS = {"trace", "memory", "core", "prefetcher", "pythia", "hermes", "athena", "report"}
_SPEC_KEYS = {f.name for f in dataclasses.fields(SyntheticSpec)}


def derived_trace_seed(seed):
    return int(substream(seed, "generator").integers(0, 1 << 63))


def config_from_dict(data, path=None, seed=None):
    """Build a :class:`SimConfig` from parsed config data (the TOML structure).

    Seed precedence: ``seed`` argument, then ``MEMLEARN_SEED``, then the file.
    """
    cfg = SimConfig()
    for k in data:
        if k not in _TOP_KEYS and k not in _SECTIONS:
            raise ConfigError(k, "unknown key", path)
        if k in _SECTIONS and not isinstance(data[k], dict):
            raise ConfigError(k, "expected a table", path)
    if "seed" in data:
        cfg.seed = _coerce("seed", data["seed"], 0, path)
    if "warmup_records" in data:
        cfg.warmup_records = _coerce("warmup_records", data["warmup_records"], 0, path)
    if "warmup_fraction" in data:
        cfg.warmup_fraction = _coerce("warmup_fraction", data["warmup_fraction"], 0.1, path)
    env_seed = os.environ.get("MEMLEARN_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed, 0)
        except ValueError:
            raise ConfigError("MEMLEARN_SEED", "must be an integer", path) from None
    if seed is not None:
        cfg.seed = seed

    tr = data.get("trace", {})
    for k in tr:
        if k != "path" and k not in _SPEC_KEYS:
            raise ConfigError(f"trace.{k}", "unknown key", path)
    if "path" in tr:
        cfg.trace_path = _coerce("trace.path", tr["path"], "", path)
        if len(tr) > 1:
            raise ConfigError("trace", "a trace path excludes generator keys", path)
    elif tr:
        if "generator" not in tr or "length" not in tr:
            raise ConfigError("trace", "a synthetic trace needs 'generator' and 'length'", path)
        try:
            gen = Pattern(tr["generator"])
        except ValueError:
            raise ConfigError("trace.generator", "unknown generator", path) from None
        base = SyntheticSpec(gen, 1, seed=derived_trace_seed(cfg.seed))
        cfg.synthetic = _fill(base, tr, "trace", path, skip=("generator",))

    cfg.memory = _fill(cfg.memory, data.get("memory", {}), "memory", path)
    cfg.core = _fill(cfg.core, data.get("core", {}), "core", path)

    pf = data.get("prefetcher", {})
    for k in pf:
        if k not in ("kind", "degree"):
            raise ConfigError(f"prefetcher.{k}", "unknown key", path)
    if "kind" in pf:
        cfg.prefetcher = _coerce("prefetcher.kind", pf["kind"], "", path)
    if "degree" in pf:
        cfg.prefetch_degree = _coerce("prefetcher.degree", pf["degree"], 0, path)

    cfg.pythia = _fill(cfg.pythia, data.get("pythia", {}), "pythia", path)

    hm = data.get("hermes", {})
    own = {"enabled", "predictor", "variant"}
    settings = _fill(cfg.hermes, {k: v for k, v in hm.items() if k in own}, "hermes", path)
    popet = PopetConfig(issue_latency_cycles=ISSUE_LATENCY_PRESETS.get(settings.variant, 6))
    popet = _fill(popet, {k: v for k, v in hm.items() if k not in own}, "hermes", path)
    cfg.hermes = dataclasses.replace(settings, popet=popet)

    at = dict(data.get("athena", {}))
    if "enabled" in at:
        cfg.athena_enabled = _coerce("athena.enabled", at.pop("enabled"), False, path)
    cfg.athena = _fill(cfg.athena, at, "athena", path)

    rp = data.get("report", {})
    for k in rp:
        if k not in ("format", "athena_log"):
            raise ConfigError(f"report.{k}", "unknown key", path)
    if "format" in rp:
        cfg.report_format = _coerce("report.format", rp["format"], "", path)
    if "athena_log" in rp:
        cfg.athena_log = _coerce("report.athena_log", rp["athena_log"], "", path)
    return cfg.validate(path)


def load_config(path, seed=None):
    """Read a TOML config file; every key is optional and unknown keys are errors."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError("<file>", f"cannot read: {e.strerror or e}", str(path)) from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"invalid TOML: {e}", str(path)) from None
    return config_from_dict(data, str(path), seed)


def _jsonable(x):
    if dataclasses.is_dataclass(x):
        return {f.name: _jsonable(getattr(x, f.name)) for f in dataclasses.fields(x)}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if hasattr(x, "value") and not isinstance(x, (int, float)):
        return x.value
    return x


def config_digest(cfg):
    """sha256 of the canonical JSON form of the config (athena log path excluded)."""
    d = _jsonable(cfg)
    d.pop("athena_log", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- report ----------------------------------------------------------------------------------


@dataclass
class MetricsReport:
    run_id: str
    config_digest: str
    trace_digest: str
    seed: int
    mechanisms: str
    total_cycles: int
    measured_cycles: int
    instructions: int
    measured_instructions: int
    demand_accesses: int
    loads: int
    stores: int
    llc_misses: int
    coverage: float = None
    overprediction: float = None
    speedup: float = None
    ocp_predictions: int = 0
    ocp_accuracy: float = None
    ocp_coverage: float = None
    hermes_issued: int = 0
    hermes_served: int = 0
    prefetch_issued: int = 0
    prefetch_useful: int = 0
    prefetch_unused: int = 0
    dram_requests: dict = field(default_factory=dict)
    dram_bytes: int = 0
    bandwidth_histogram: list = field(default_factory=list)
    athena_actions: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def as_dict(self, include_timing=False):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        if not include_timing:
            d.pop("wall_clock_seconds")
        return d


# Column order of the CSV report; nested fields are flattened as shown.
CSV_COLUMNS = (
    "run_id", "config_digest", "trace_digest", "seed", "mechanisms",
    "total_cycles", "measured_cycles", "instructions", "measured_instructions",
    "demand_accesses", "loads", "stores", "llc_misses",
    "coverage", "overprediction", "speedup",
    "ocp_predictions", "ocp_accuracy", "ocp_coverage", "hermes_issued", "hermes_served",
    "prefetch_issued", "prefetch_useful", "prefetch_unused",
    "dram_demand", "dram_prefetch", "dram_hermes", "dram_bytes",
    "bandwidth_histogram", "athena_actions",
)


def _csv_row(report):
    d = report.as_dict()
    dr = d.pop("dram_requests")
    d["dram_demand"] = dr.get("demand", 0)
    d["dram_prefetch"] = dr.get("prefetch", 0)
    d["dram_hermes"] = dr.get("hermes", 0)
    d["bandwidth_histogram"] = " ".join(str(v) for v in d["bandwidth_histogram"])
    d["athena_actions"] = " ".join(f"{k}={v}" for k, v in sorted(d["athena_actions"].items()))
    return ["" if d[c] is None else d[c] for c in CSV_COLUMNS]


def serialize_report(report, fmt="json"):
    if fmt == "json":
        return json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerow(_csv_row(report))
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report, fmt="json", path=None):
    """Write ``report`` to ``path`` (or return the text when path is None)."""
    text = serialize_report(report, fmt)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def parse_report(text):
    return MetricsReport(**json.loads(text))


# -- simulation -------------------------------------------------------------------------------


def _make_prefetcher(cfg, dram):
    kind, d = cfg.prefetcher, cfg.prefetch_degree
    if kind == "none":
        return NoPrefetcher(0)
    if kind == "stride":
        return StridePrefetcher(d)
    if kind == "nextline":
        return NextLinePrefetcher(d)
    if kind == "adversarial":
        return AdversarialPrefetcher(Stream(cfg.seed, "adversarial"), d)
    window = cfg.memory.bw_window
    return Pythia(cfg.pythia, Stream(cfg.seed, "pythia-exploration"), d,
                  bandwidth=lambda now: dram.bandwidth_usage(now, window))


def _records(cfg, trace):
    if trace is not None:
        return trace
    if cfg.trace_path is not None:
        return load_trace(cfg.trace_path)
    if cfg.synthetic is not None:
        return generate(cfg.synthetic)
    raise ConfigError("trace", "no trace source configured")


def _trace_length(cfg, trace):
    if cfg.synthetic is not None and trace is None and cfg.trace_path is None:
        return cfg.synthetic.length
    return None


_KIND_CODE = {Kind.LOAD: 0, Kind.STORE: 1, Kind.BRANCH: 2, Kind.OTHER: 3}
_PACK = struct.Struct("<QQBQBB").pack


class Simulation:
    """One run of one config; keeps every component reachable for inspection.

    ``record_accesses`` keeps the ``(address, hit level)`` of every demand access
    and the ``(predicted, went off-chip)`` pair of every OCP prediction.
    """

    def __init__(self, config, trace=None, record_accesses=False, log_decisions=False):
        self.config = config
        self.trace = trace
        self.record_accesses = record_accesses
        self.accesses = []
        self.ocp_log = []
        self.mem = MemoryHierarchy(config.memory)
        self.prefetcher = _make_prefetcher(config, self.mem.dram)
        if log_decisions and isinstance(self.prefetcher, Pythia):
            self.prefetcher.log_decisions = True
        self.ocp = None
        self.hermes = None
        if config.hermes.enabled:
            self.ocp = (OracleOcp(self.mem) if config.hermes.predictor == "oracle"
                        else Popet(config.hermes.popet))
            self.hermes = HermesDatapath(self.mem.dram, config.issue_latency())
        self.athena = None
        if config.athena_enabled:
            self.athena = Athena(config.athena, Stream(config.seed, "athena-exploration"))
            tel = self.athena.telemetry
            self.mem.on_prefetch_evict = tel.prefetch_evicted
            self.mem.on_llc_miss = tel.llc_miss
            apply_action(self.athena.action, self.prefetcher)
        self.ocp_enabled = self.hermes is not None
        self.ocp_counts = Counter()
        self.epoch_loads = []
        self.report = None

    def run(self):
        t0 = time.perf_counter()
        cfg = self.config
        mem = self.mem
        dram = mem.dram
        pf = self.prefetcher
        ocp, hermes, athena = self.ocp, self.hermes, self.athena
        tel = athena.telemetry if athena else None
        epoch_len = cfg.athena.epoch_len
        W = cfg.core.window
        rob = cfg.core.rob_records
        bw_window = cfg.memory.bw_window
        trains = not isinstance(pf, NoPrefetcher)
        record = self.record_accesses
        accesses = self.accesses
        ocp_counts = self.ocp_counts
        MEMORY, L1 = Level.MEMORY, Level.L1
        LOAD, STORE, BRANCH = Kind.LOAD, Kind.STORE, Kind.BRANCH

        length = _trace_length(cfg, self.trace)
        warm_at = cfg.warmup_records
        if warm_at is None and length is not None:
            warm_at = int(length * cfg.warmup_fraction)
        warm_snapshot = None
        warm_cycle = 0
        warm_ocp = Counter()
        warm_dram = Counter()
        warm_hermes = 0

        digest = hashlib.sha256()
        pending = []
        outstanding = deque()
        now = 0
        last_done = 0
        n = 0
        bw_hist = [0] * BW_BINS
        ep_start_cycle = 0
        ep_loads = 0
        ep_mispred = 0
        ep_dram = Counter()
        records = _records(cfg, self.trace)
        buffered = None
        if warm_at is None:
            buffered = list(records)
            warm_at = int(len(buffered) * cfg.warmup_fraction)
            records = buffered

        for rec in records:
            kind = rec.kind
            pending.append(_PACK(rec.seq, rec.pc, _KIND_CODE[kind], rec.vaddr, rec.size,
                                 rec.taken << 1 | rec.mispredicted))
            if len(pending) >= 4096:
                digest.update(b"".join(pending))
                pending.clear()

            if n == warm_at:
                warm_snapshot = mem.ledger.snapshot()
                warm_cycle = now
                warm_ocp = Counter(ocp_counts)
                warm_dram = Counter(dram.requests_by_kind)
                warm_hermes = hermes.issued if hermes else 0

            if athena is not None and n and n % epoch_len == 0:
                cur = dram.requests_by_kind
                d = (cur[RequestKind.DEMAND] - ep_dram[RequestKind.DEMAND],
                     cur[RequestKind.PREFETCH] - ep_dram[RequestKind.PREFETCH],
                     cur[RequestKind.HERMES] - ep_dram[RequestKind.HERMES])
                stats = tel.close(now, now - ep_start_cycle, ep_loads, ep_mispred,
                                  dram.bandwidth_usage(now, bw_window), d)
                self.epoch_loads.append(ep_loads)
                action = athena.end_epoch(stats, now)
                self.ocp_enabled = apply_action(action, pf)
                ep_start_cycle, ep_loads, ep_mispred = now, 0, 0
                ep_dram = Counter(cur)

            # in-order retirement: the oldest load must finish within the window
            while outstanding and (outstanding[0][1] <= now or outstanding[0][0] <= n - rob):
                _, done = outstanding.popleft()
                if done > now:
                    now = done

            if n & 255 == 0:
                dram.retire(now)
                if n & 4095 == 0:
                    dram.prune(now - bw_window - 1)
                if n >= warm_at:
                    u = dram.bandwidth_usage(now, bw_window)
                    bw_hist[min(BW_BINS - 1, int(u * BW_BINS))] += 1

            for line in mem.pop_fills(now):
                pf.on_fill(line << LINE_SHIFT, now)
            if hermes is not None:
                hermes.retire(now)

            if kind is LOAD or kind is STORE:
                addr = rec.vaddr
                if kind is LOAD:
                    ep_loads += 1
                    while len(outstanding) >= W:
                        _, done = outstanding.popleft()
                        if done > now:
                            now = done
                    meta = None
                    if self.ocp_enabled:
                        meta = ocp.predict(rec.pc, addr)
                        if meta.predicted_offchip:
                            hermes.issue(True, addr, now)
                    res = mem.demand_access(addr, LOAD, now, hermes)
                    off = res.hit_level is MEMORY
                    if meta is not None:
                        ocp.train(meta, off)
                        p = meta.predicted_offchip
                        ocp_counts["consulted"] += 1
                        ocp_counts["predictions"] += p
                        ocp_counts["correct"] += p and off
                        ocp_counts["offchip"] += off
                        if tel is not None:
                            tel.ocp_outcome(p, off)
                        if record:
                            self.ocp_log.append((p, off))
                    if tel is not None:
                        tel.demand(addr >> LINE_SHIFT)
                        if off:
                            tel.miss_latency(res.completion_cycle, res.completion_cycle - now)
                    outstanding.append((n, res.completion_cycle))
                    if res.completion_cycle > last_done:
                        last_done = res.completion_cycle
                    if trains and res.hit_level is not L1:
                        dec = pf.on_demand(rec.pc, addr, res.hit_level, now)
                        for a in dec.addrs:
                            mem.prefetch_fill(a, now)
                            if tel is not None:
                                tel.prefetch_issued(a >> LINE_SHIFT)
                else:
                    res = mem.demand_access(addr, STORE, now)
                if record:
                    accesses.append((addr, int(res.hit_level)))
            elif kind is BRANCH and rec.mispredicted:
                ep_mispred += 1
            now += 1
            n += 1

        digest.update(b"".join(pending))
        if warm_snapshot is None:
            warm_snapshot = mem.ledger.snapshot()
            warm_cycle = now
            warm_ocp = Counter(ocp_counts)
            warm_dram = Counter(dram.requests_by_kind)
            warm_hermes = hermes.issued if hermes else 0
        if athena is not None:
            self.epoch_loads.append(ep_loads)
        total_cycles = max(now, last_done)
        mem.finalize()
        self.total_cycles = total_cycles
        self.instructions = n
        self.measured = mem.ledger - warm_snapshot
        self.trace_digest = digest.hexdigest()
        self.report = self._report(total_cycles, n, warm_at, warm_cycle, warm_ocp, warm_dram,
                                   warm_hermes, bw_hist, time.perf_counter() - t0)
        return self.report

    def _report(self, total_cycles, n, warm_at, warm_cycle, warm_ocp, warm_dram, warm_hermes,
                bw_hist, elapsed):
        cfg = self.config
        led = self.measured
        digest = config_digest(cfg)
        oc = {k: self.ocp_counts[k] - warm_ocp[k] for k in ("predictions", "correct", "offchip")}
        om = ocp_metrics(oc["predictions"], oc["correct"], oc["offchip"])
        dram = self.mem.dram
        by_kind = {k.value: dram.requests_by_kind[k] - warm_dram[k] for k in RequestKind}
        mech = [cfg.prefetcher]
        if cfg.hermes.enabled:
            mech.append(f"hermes-{cfg.hermes.predictor}")
        if cfg.athena_enabled:
            mech.append("athena")
        actions = {}
        if self.athena is not None:
            actions = dict(Counter(f"{e.action}:{e.degree}" for e in self.athena.log))
        return MetricsReport(
            run_id=f"{digest[:12]}-{cfg.seed}",
            config_digest=digest,
            trace_digest=self.trace_digest,
            seed=cfg.seed,
            mechanisms="+".join(mech),
            total_cycles=total_cycles,
            measured_cycles=total_cycles - warm_cycle,
            instructions=n,
            measured_instructions=n - min(warm_at, n),
            demand_accesses=led.demand_accesses,
            loads=led.loads,
            stores=led.stores,
            llc_misses=led.demand_misses_llc,
            ocp_predictions=oc["predictions"],
            ocp_accuracy=om["accuracy"],
            ocp_coverage=om["coverage"],
            hermes_issued=(self.hermes.issued - warm_hermes) if self.hermes else 0,
            hermes_served=led.hermes_served,
            prefetch_issued=led.prefetch_issued,
            prefetch_useful=led.prefetch_useful,
            prefetch_unused=led.prefetch_unused,
            dram_requests=by_kind,
            dram_bytes=64 * sum(by_kind.values()),
            bandwidth_histogram=bw_hist,
            athena_actions=actions,
            wall_clock_seconds=round(elapsed, 3),
        )

    def write_athena_log(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "state", "action", "degree", "reward"))
            for e in self.athena.log if self.athena else ():
                w.writerow((e.epoch, " ".join(map(str, e.state)), e.action, e.degree,
                            f"{e.reward:.6f}"))


def run_simulation(config, trace=None):
    sim = Simulation(config, trace)
    report = sim.run()
    if config.athena_log:
        sim.write_athena_log(config.athena_log)
    return report


def paired_run(config, trace=None, log_decisions=False):
    """Run with mechanisms off, then on, over the same trace and seed."""
    if trace is not None and not isinstance(trace, list):
        trace = list(trace)
    base_sim = Simulation(config.without_mechanisms(), trace)
    base = base_sim.run()
    sim = Simulation(config, trace, log_decisions=log_decisions)
    with_ = sim.run()
    if config.athena_log:
        sim.write_athena_log(config.athena_log)
    assert base.trace_digest == with_.trace_digest, "paired runs consumed different traces"
    co = (coverage_and_overprediction(sim.measured, base_sim.measured)
          if base.llc_misses else {"coverage": None, "overprediction": None})
    speedup = base.measured_cycles / with_.measured_cycles if with_.measured_cycles else None
    with_.coverage = co["coverage"]
    with_.overprediction = co["overprediction"]
    with_.speedup = speedup
    return {"baseline": base, "with_mechanisms": with_, "coverage": co["coverage"],
            "overprediction": co["overprediction"], "speedup": speedup,
            "simulations": (base_sim, sim)}


def report_diff(a, b):
    """Fields whose values differ between two reports: ``{name: (a, b)}``."""
    da, db = a.as_dict(), b.as_dict()
    return {k: (da.get(k), db.get(k)) for k in sorted(set(da) | set(db)) if da.get(k) != db.get(k)}
