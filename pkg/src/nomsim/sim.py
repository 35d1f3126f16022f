"""Simulation driver and statistics.

Per logic cycle the kernel runs, in order: trace arrivals, window-boundary
circuit releases, the CCU pipeline, the NoM fabric, copy engines, then vault
controllers.  Idle cycles are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .ccu import CircuitControlUnit
from .config import SimConfig
from .dram import AddressError, AddressMap, DramTiming, Location, MemoryStore, MemRequest, OffChipLink, VaultController
from .engines import (
    ConventionalEngine,
    CopyJob,
    Engine,
    FixedLatencyEngine,
    MachinePolicy,
    Mechanism,
    NomEngine,
    SharedBusEngine,
    dispatch,
    dispatch_init,
)
from .fabric import Fabric, NomClock
from .kernel import ARRIVE, ENGINE, Kernel
from .tdm import Allocator
from .topology import Mesh, Port
from .workload import TraceRecord, generate, preset

CLASS_ORDER = ("COPY", "ICOPY", "INIT", "READ", "WRITE")


def build_trace(cfg: SimConfig, amap: Optional[AddressMap] = None) -> List[TraceRecord]:
    amap = amap or address_map(cfg)
    mix = preset(cfg.preset, count=cfg.count, copy_bytes=cfg.copy_bytes,
                 interarrival=cfg.interarrival, seed=cfg.seed)
    return generate(mix, amap)


def address_map(cfg: SimConfig) -> AddressMap:
    mesh = Mesh(cfg.mesh_x, cfg.mesh_y, cfg.mesh_z, cfg.banks_per_slice)
    return AddressMap(mesh, cfg.row_bytes, cfg.bank_bytes, cfg.rows_per_subarray)


def _percentile(sorted_vals: Sequence[int], q: float) -> int:
    if not sorted_vals:
        return 0
    rank = max(1, math.ceil(q * len(sorted_vals)))
    return sorted_vals[rank - 1]


@dataclass
class StatsReport:
    values: Dict[str, object] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def to_text(self) -> str:
        lines = []
        for k, v in self.values.items():
            if isinstance(v, float):
                v = f"{v:.6f}"
            lines.append(f"{k} = {v}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "StatsReport":
        vals: Dict[str, object] = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            v = v.strip()
            try:
                vals[k.strip()] = int(v)
            except ValueError:
                try:
                    vals[k.strip()] = float(v)
                except ValueError:
                    vals[k.strip()] = v
        return cls(vals)

    def table(self) -> str:
        width = max((len(k) for k in self.values), default=0)
        return "".join(f"{k:<{width}}  {v:.4f}\n" if isinstance(v, float) else f"{k:<{width}}  {v}\n"
                       for k, v in self.values.items())


class Simulator:
    def __init__(self, cfg: SimConfig, trace: Optional[Sequence[TraceRecord]] = None):
        self.cfg = cfg
        self.mesh = Mesh(cfg.mesh_x, cfg.mesh_y, cfg.mesh_z, cfg.banks_per_slice)
        self.amap = AddressMap(self.mesh, cfg.row_bytes, cfg.bank_bytes, cfg.rows_per_subarray)
        self.trace = list(trace) if trace is not None else build_trace(cfg, self.amap)
        self.kernel = Kernel()
        self.store = MemoryStore()
        self.timing = DramTiming(cfg.t_rcd, cfg.t_cas, cfg.t_rp, cfg.vault_bus_bytes)
        self.clock = NomClock(cfg.clock_ratio)
        self.policy = MachinePolicy(nom=cfg.mechanism == "nom", in_dram=cfg.mechanism != "conventional")
        self.bus: Optional[SharedBusEngine] = None
        stalled = lambda vid, c: self.bus is not None and self.bus.holds(vid)
        self.vaults = [
            VaultController(v, self.mesh.banks_per_vault, self.timing, self.kernel, self.store, stalled)
            for v in range(self.mesh.num_vaults)
        ]
        self.link = OffChipLink(cfg.offchip_latency, cfg.offchip_bits)
        self.engines: Dict[Mechanism, Engine] = {
            Mechanism.ROWCLONE_INTRA: FixedLatencyEngine(Mechanism.ROWCLONE_INTRA, cfg.rowclone_intra_cycles,
                                                         self.amap, self.vaults, self.store),
            Mechanism.LISA: FixedLatencyEngine(Mechanism.LISA, cfg.lisa_cycles, self.amap, self.vaults, self.store),
            Mechanism.CONVENTIONAL: ConventionalEngine(self.kernel, self.amap, self.vaults, self.link,
                                                       cfg.cpu_copy_streams),
        }
        self.bus = SharedBusEngine(self.kernel, self.vaults, self.store, self.timing, cfg.bus_scope)
        self.engines[Mechanism.ROWCLONE_INTER] = self.bus
        self.alloc = self.fabric = self.ccu = None
        if self.policy.nom:
            light = cfg.nom_mode == "light"
            self.alloc = Allocator(self.mesh, cfg.slots, cfg.slots_per_window_max, light=light)
            self.fabric = Fabric(self.mesh, cfg.slots, light, self.clock, self.vaults,
                                 beat_bytes=cfg.link_bits // 8, audit=cfg.audit)
            self.ccu = CircuitControlUnit(self.mesh, self.alloc, self.fabric, self.clock, self.kernel,
                                          self.vaults, self.store, self.timing, cfg.link_bits)
            self.engines[Mechanism.NOM] = NomEngine(self.kernel, self.alloc, self.fabric, self.ccu)
        self.jobs: List[CopyJob] = []
        self.latency: Dict[str, List[int]] = {c: [] for c in CLASS_ORDER}
        self.finish_latency: Dict[int, int] = {}
        self.mech_count: Dict[str, int] = {m.value: 0 for m in Mechanism}
        self.issued = 0
        self.completed = 0
        self.last_done = 0
        self.payload_checked = 0
        self.payload_mismatches = 0
        self.copy_bytes = 0
        self.incomplete = False
        self._decoded = [self._decode(i, r) for i, r in enumerate(self.trace)]

    # -- ingestion ----------------------------------------------------------
    def _decode(self, i: int, r: TraceRecord) -> Tuple[Location, Optional[Location]]:
        try:
            src = self.amap.decode(r.src)
            dst = self.amap.decode(r.dst) if r.dst is not None else None
            self.amap.decode(r.src + r.size - 1)
            if r.dst is not None:
                self.amap.decode(r.dst + r.size - 1)
        except AddressError as e:
            raise AddressError(f"trace record {i}: {e}") from None
        return src, dst

    def _arrive(self, i: int, c: int) -> None:
        r = self.trace[i]
        src, dst = self._decoded[i]
        self.issued += 1
        if r.cls in ("READ", "WRITE"):
            data = None
            if r.cls == "WRITE":
                data = (i.to_bytes(8, "little") * (r.size // 8))
            req = MemRequest(r.cls.lower(), src, r.size, lambda cyc, q, i=i: self._done(i, cyc), data=data, issue=c)
            self.vaults[src.vault].enqueue_regular(req, c)
            return
        if r.cls == "INIT":
            job = CopyJob(i, "INIT", None, src, r.size, c, self._job_done, expected=bytes(r.size))
            mech = dispatch_init(self.policy)
        else:
            job = CopyJob(i, r.cls, src, dst, r.size, c, self._job_done,
                          expected=self.store.read(src.addr, r.size))
            mech = dispatch(src, dst, self.amap, self.policy)
        job.mechanism = mech
        self.mech_count[mech.value] += 1
        self.jobs.append(job)
        delay = self.cfg.coherence_penalty if mech is not Mechanism.CONVENTIONAL else 0
        engine = self.engines[mech]
        if delay:
            self.kernel.at(c + delay, ENGINE, lambda cyc: engine.submit(job, cyc))
        else:
            engine.submit(job, c)

    def _job_done(self, c: int, job: CopyJob) -> None:
        job.done = c
        got = self.store.read(job.dst.addr, job.size)
        self.payload_checked += 1
        if got != job.expected:
            self.payload_mismatches += 1
        self.copy_bytes += job.size
        self._done(job.rid, c)

    def _done(self, i: int, c: int) -> None:
        self.completed += 1
        lat = c - self.trace[i].cycle
        self.finish_latency[i] = lat
        self.latency[self.trace[i].cls].append(lat)
        self.last_done = max(self.last_done, c)

    # -- run ----------------------------------------------------------------
    def run(self) -> StatsReport:
        k = self.kernel
        for i, r in enumerate(self.trace):
            k.at(r.cycle, ARRIVE, lambda c, i=i: self._arrive(i, c))
        cap = self.cfg.cycle_cap
        while not k.empty():
            if k.peek() > cap:
                self.incomplete = True
                break
            k.step()
        return self.report()

    def _nom_links(self) -> int:
        mesh = self.mesh
        light = self.cfg.nom_mode == "light"
        count = 0
        for b in range(mesh.num_banks):
            c = mesh.coord_of(b)
            for p in (Port.XPlus, Port.XMinus, Port.YPlus, Port.YMinus) + (() if light else (Port.ZPlus, Port.ZMinus)):
                if mesh.neighbor(c, p) is not None:
                    count += 1
        if light and mesh.Z > 1:
            count += mesh.num_vaults
        return count

    def report(self) -> StatsReport:
        cfg = self.cfg
        v: Dict[str, object] = {}
        v["config"] = cfg.name or "unnamed"
        v["mechanism"] = cfg.mechanism
        v["nom_mode"] = cfg.nom_mode
        v["clock_ratio"] = float(self.clock.ratio)
        v["incomplete"] = int(self.incomplete)
        v["drain_cycles"] = self.last_done
        v["requests_issued"] = self.issued
        v["requests_completed"] = self.completed
        v["requests_pending"] = len(self.trace) - self.completed
        for cls in CLASS_ORDER:
            lat = sorted(self.latency[cls])
            key = cls.lower()
            v[f"{key}_count"] = len(lat)
            v[f"{key}_latency_mean"] = (sum(lat) / len(lat)) if lat else 0.0
            v[f"{key}_latency_p50"] = _percentile(lat, 0.50)
            v[f"{key}_latency_p95"] = _percentile(lat, 0.95)
            v[f"{key}_latency_p99"] = _percentile(lat, 0.99)
        for m in Mechanism:
            v[f"mech_{m.value}"] = self.mech_count[m.value]
        v["copy_bytes"] = self.copy_bytes
        v["copy_throughput_bytes_per_cycle"] = self.copy_bytes / self.last_done if self.last_done else 0.0
        v["payload_checked"] = self.payload_checked
        v["payload_mismatches"] = self.payload_mismatches
        v["offchip_transactions"] = self.link.transactions
        v["offchip_bytes"] = self.link.bytes_moved
        v["rowclone_bus_busy_cycles"] = self.bus.bus_busy_cycles
        if self.fabric is not None:
            st = self.fabric.stats
            nom_cycles = self.clock.first_at_or_after(self.last_done + 1) if self.last_done else 0
            links = self._nom_links()
            v["nom_circuits"] = len(self.ccu.completed)
            v["nom_link_traversals"] = st.link_traversals
            v["nom_link_utilization"] = st.link_traversals / (nom_cycles * links) if nom_cycles and links else 0.0
            v["nom_beats"] = st.beats_delivered
            v["nom_vertical_vault_cycles"] = st.vertical_vault_cycles
            v["nom_conflict_vault_cycles"] = st.conflict_vault_cycles
            v["vault_bus_conflict_rate"] = st.conflict_rate()
            v["tsv_coincidence_rate"] = st.coincidence_rate()
            v["nom_timing_violations"] = st.timing_violations
            v["nom_crossbar_violations"] = st.crossbar_violations
            v["nom_double_bookings"] = self.alloc.double_bookings
            v["ccu_searches"] = self.alloc.searches
            v["ccu_failed_searches"] = self.alloc.failures
            v["ccu_sideband_words"] = self.ccu.sideband_words
        return StatsReport(v)


def run(cfg: SimConfig, trace: Optional[Sequence[TraceRecord]] = None) -> StatsReport:
    return Simulator(cfg, trace).run()


COMPARABLE = {"name", "mechanism", "nom_mode", "clock_ratio"}


def compare(configs: Sequence[SimConfig], trace: Optional[Sequence[TraceRecord]] = None) -> List[dict]:
    """Run every config on one shared trace; rows carry drain cycles and the
    speedup relative to the first config."""
    if not configs:
        raise ValueError("no configurations to compare")
    base = configs[0]
    for cfg in configs[1:]:
        for f in base.__dataclass_fields__:
            if f not in COMPARABLE and getattr(cfg, f) != getattr(base, f):
                raise ValueError(f"config {cfg.name or '?'} differs from {base.name or '?'} in {f!r}; "
                                 f"only {sorted(COMPARABLE - {'name'})} may vary")
    if trace is None:
        trace = build_trace(base)
    trace = list(trace)
    rows = []
    first = None
    for cfg in configs:
        rep = run(cfg, trace)
        drain = rep["drain_cycles"]
        if first is None:
            first = drain
        rows.append({
            "config": rep["config"],
            "drain_cycles": drain,
            "speedup": (first / drain) if drain else 0.0,
            "report": rep,
        })
    return rows


def format_comparison(rows: Sequence[dict]) -> str:
    width = max(len("config"), *(len(r["config"]) for r in rows))
    out = [f"{'config':<{width}}  {'drain_cycles':>14}  {'speedup':>8}\n"]
    for r in rows:
        out.append(f"{r['config']:<{width}}  {r['drain_cycles']:>14}  {r['speedup']:>8.3f}\n")
    return "".join(out)
