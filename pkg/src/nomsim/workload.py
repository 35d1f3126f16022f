"""Synthetic request streams and the trace file format.

Trace lines are whitespace separated::

    <cycle> <CLASS> <src-hex> [<dst-hex>] <bytes>

``CLASS`` is one of COPY (inter-bank copy), ICOPY (intra-bank copy), INIT,
READ or WRITE; only the copy classes carry a destination.  ``#`` starts a
comment line.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

from .dram import AddressMap

CLASSES = ("COPY", "ICOPY", "INIT", "READ", "WRITE")
COPY_CLASSES = ("COPY", "ICOPY")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    cls: str
    src: int
    dst: Optional[int]
    size: int

    def to_line(self) -> str:
        if self.dst is None:
            return f"{self.cycle} {self.cls} {self.src:#x} {self.size}"
        return f"{self.cycle} {self.cls} {self.src:#x} {self.dst:#x} {self.size}"


@dataclass(frozen=True)
class TrafficMix:
    inter: float
    intra: float
    init: float
    regular: float
    count: int = 10000
    copy_bytes: int = 4096
    regular_bytes: int = 64
    interarrival: float = 0.0  # mean gap in cycles; 0 puts every request at cycle 0
    write_fraction: float = 0.5
    same_subarray: float = 0.5  # share of intra-bank copies that stay in one subarray
    seed: int = 1

    def __post_init__(self):
        fr = (self.inter, self.intra, self.init, self.regular)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"class fractions must be nonnegative and sum to 1, got {fr}")
        if self.count < 0 or self.interarrival < 0:
            raise ValueError("count and interarrival must be nonnegative")
        if self.copy_bytes <= 0 or self.copy_bytes % 64 or self.regular_bytes <= 0 or self.regular_bytes % 64:
            raise ValueError("sizes must be positive multiples of 64 bytes")

    @property
    def fractions(self):
        return {"COPY": self.inter, "ICOPY": self.intra, "INIT": self.init, "REGULAR": self.regular}


def _file_copy(inter: float) -> dict:
    rest = (1.0 - inter) / 3
    return dict(inter=inter, intra=rest, init=rest, regular=1.0 - inter - 2 * rest)


PRESETS = {
    "fileCopy20": _file_copy(0.20),
    "fileCopy40": _file_copy(0.40),
    "fileCopy60": _file_copy(0.60),
    "fork": dict(inter=0.5, intra=0.3, init=0.1, regular=0.1),
    "regular": dict(inter=0.0, intra=0.0, init=0.0, regular=1.0),
}


def preset(name: str, **overrides) -> TrafficMix:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return TrafficMix(**{**base, **overrides})


class _Regions:
    """Hands out distinct region-aligned addresses."""

    def __init__(self, amap: AddressMap, region: int, rng: random.Random):
        if amap.row_bytes % region and region % amap.row_bytes:
            raise ValueError("region size must divide the row size or be a multiple of it")
        self.amap = amap
        self.region = region
        self.rng = rng
        self.per_bank = amap.bank_bytes // region
        self.used: set = set()

    def _take(self, bank: int, slot: int) -> Optional[int]:
        addr = self.amap.encode(bank, 0) + slot * self.region
        if addr in self.used:
            return None
        self.used.add(addr)
        return addr

    def anywhere(self) -> int:
        while True:
            a = self._take(self.rng.randrange(self.amap.mesh.num_banks), self.rng.randrange(self.per_bank))
            if a is not None:
                return a

    def in_bank(self, bank: int, rows: Optional[range] = None) -> int:
        per_row = max(1, self.amap.row_bytes // self.region)
        while True:
            if rows is None:
                slot = self.rng.randrange(self.per_bank)
            else:
                slot = self.rng.randrange(rows.start * per_row, rows.stop * per_row)
            a = self._take(bank, slot)
            if a is not None:
                return a


def generate(mix: TrafficMix, amap: AddressMap) -> List[TraceRecord]:
    rng = random.Random(mix.seed)
    regions = _Regions(amap, max(mix.copy_bytes, mix.regular_bytes), rng)
    rows_sa = amap.rows_per_subarray
    n_sub = amap.rows_per_bank // rows_sa
    cuts = [mix.inter, mix.inter + mix.intra, mix.inter + mix.intra + mix.init]
    out: List[TraceRecord] = []
    cycle = 0
    for i in range(mix.count):
        if i and mix.interarrival:
            cycle += round(rng.expovariate(1.0 / mix.interarrival))
        u = rng.random()
        if u < cuts[0]:
            src = regions.anywhere()
            sbank = amap.decode(src).bank
            dbank = rng.randrange(amap.mesh.num_banks - 1)
            dbank += dbank >= sbank
            out.append(TraceRecord(cycle, "COPY", src, regions.in_bank(dbank), mix.copy_bytes))
        elif u < cuts[1]:
            src = regions.anywhere()
            loc = amap.decode(src)
            sa = amap.subarray(loc.row)
            if n_sub == 1 or rng.random() < mix.same_subarray:
                rows = range(sa * rows_sa, (sa + 1) * rows_sa)
            else:
                other = rng.randrange(n_sub - 1)
                other += other >= sa
                rows = range(other * rows_sa, (other + 1) * rows_sa)
            out.append(TraceRecord(cycle, "ICOPY", src, regions.in_bank(loc.bank, rows), mix.copy_bytes))
        elif u < cuts[2]:
            out.append(TraceRecord(cycle, "INIT", regions.anywhere(), None, mix.copy_bytes))
        else:
            cls = "WRITE" if rng.random() < mix.write_fraction else "READ"
            out.append(TraceRecord(cycle, cls, regions.anywhere(), None, mix.regular_bytes))
    return out


def parse_lines(lines: Iterable[str], source: str = "<trace>") -> List[TraceRecord]:
    out: List[TraceRecord] = []
    last = 0
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{no}"
        parts = line.split()
        try:
            cycle = int(parts[0])
            cls = parts[1].upper()
        except (IndexError, ValueError):
            raise TraceError(f"{where}: expected '<cycle> <CLASS> ...', got {line!r}") from None
        if cls not in CLASSES:
            raise TraceError(f"{where}: unknown class {parts[1]!r}")
        want = 5 if cls in COPY_CLASSES else 4
        if len(parts) != want:
            raise TraceError(f"{where}: {cls} takes {want - 2} fields after the class, got {len(parts) - 2}")
        try:
            src = int(parts[2], 16)
            dst = int(parts[3], 16) if want == 5 else None
            size = int(parts[-1])
        except ValueError:
            raise TraceError(f"{where}: malformed address or size in {line!r}") from None
        if cycle < 0 or cycle < last:
            raise TraceError(f"{where}: issue cycles must be nonnegative and nondecreasing")
        if size <= 0 or size % 64:
            raise TraceError(f"{where}: size must be a positive multiple of 64 bytes")
        if src % 64 or (dst is not None and dst % 64):
            raise TraceError(f"{where}: addresses must be 64-byte aligned")
        last = cycle
        out.append(TraceRecord(cycle, cls, src, dst, size))
    return out


def load_trace(path: Union[str, Path]) -> List[TraceRecord]:
    p = Path(path)
    with p.open(encoding="utf-8") as fh:
        return parse_lines(fh, str(p))


def dump_trace(records: Sequence[TraceRecord], path: Union[str, Path, None] = None) -> str:
    text = "".join(r.to_line() + "\n" for r in records)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
