"""Simulation configuration and its flat ``key = value`` file format.

Blank lines and lines starting with ``#`` are ignored.  Keys are the field
names of :class:`SimConfig`; unknown keys are an error.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Union

from .workload import PRESETS

MECHANISMS = ("nom", "rowclone", "conventional")
NOM_MODES = ("full", "light")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    name: str = ""
    # geometry
    mesh_x: int = 8
    mesh_y: int = 8
    mesh_z: int = 4
    banks_per_slice: int = 2
    # fabric
    slots: int = 16
    link_bits: int = 64
    slots_per_window_max: int = 4
    mechanism: str = "nom"
    nom_mode: str = "full"
    clock_ratio: float = 1.0
    audit: bool = True
    # dram
    t_rcd: int = 10
    t_cas: int = 10
    t_rp: int = 10
    vault_bus_bytes: int = 8
    row_bytes: int = 8192
    bank_bytes: int = 16 * 1024 * 1024
    rows_per_subarray: int = 512
    # other mechanisms
    rowclone_intra_cycles: int = 100
    lisa_cycles: int = 200
    bus_scope: str = "global"
    offchip_latency: int = 8
    offchip_bits: int = 64
    cpu_copy_streams: int = 1
    coherence_penalty: int = 0
    # workload
    preset: str = "fileCopy60"
    count: int = 10000
    copy_bytes: int = 4096
    interarrival: float = 0.0
    seed: int = 1
    # run control
    cycle_cap: int = 100_000_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(min(self.mesh_x, self.mesh_y, self.mesh_z) >= 1, "mesh dimensions must be positive")
        need(self.banks_per_slice >= 1 and self.mesh_x % self.banks_per_slice == 0,
             "mesh_x must be a multiple of banks_per_slice")
        need(2 <= self.slots <= 16, "slots must be in [2, 16] (4-bit sideband slot field)")
        need(self.link_bits > 0 and self.link_bits % 8 == 0, "link_bits must be a positive multiple of 8")
        need(512 % self.link_bits == 0, "link_bits must divide a 64-byte block")
        need(self.slots_per_window_max >= 1, "slots_per_window_max must be >= 1")
        need(self.mechanism in MECHANISMS, f"mechanism must be one of {MECHANISMS}")
        need(self.nom_mode in NOM_MODES, f"nom_mode must be one of {NOM_MODES}")
        need(0 < self.clock_ratio <= 1, "clock_ratio must be in (0, 1]")
        need(min(self.t_rcd, self.t_cas, self.t_rp) >= 1, "DRAM timings must be >= 1 cycle")
        need(self.vault_bus_bytes > 0, "vault_bus_bytes must be positive")
        need(self.bus_scope in ("global", "vault"), "bus_scope must be 'global' or 'vault'")
        need(self.offchip_latency >= 0 and self.offchip_bits > 0 and self.offchip_bits % 8 == 0,
             "off-chip link needs latency >= 0 and a positive byte-multiple width")
        need(self.cpu_copy_streams >= 1, "cpu_copy_streams must be >= 1")
        need(self.coherence_penalty >= 0, "coherence_penalty must be >= 0")
        need(min(self.rowclone_intra_cycles, self.lisa_cycles) >= 1, "in-bank copy latencies must be >= 1")
        need(self.preset in PRESETS, f"preset must be one of {tuple(PRESETS)}")
        need(self.count >= 0 and self.interarrival >= 0, "count and interarrival must be nonnegative")
        need(self.copy_bytes > 0 and self.copy_bytes % 64 == 0, "copy_bytes must be a positive multiple of 64")
        need(self.cycle_cap >= 1, "cycle_cap must be positive")
        bpv = self.banks_per_slice * self.mesh_z
        need(bpv <= 8, "at most 8 banks per vault (3-bit sideband bank field)")

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw.replace("_", ""), 0)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    values: Dict[str, object] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _TYPES:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        values[key] = _coerce(key, val)
    return SimConfig(**values)


def load_config(path: Union[str, Path]) -> SimConfig:
    p = Path(path)
    cfg = parse_config(p.read_text(encoding="utf-8"), str(p))
    if not cfg.name:
        cfg = cfg.with_(name=p.stem)
    return cfg
