"""3D mesh geometry over DRAM banks.

Banks are linearized x-major: ``bank = x + X*y + X*Y*z``.  A vault is a
vertical column of slices; each slice holds two x-adjacent banks, so vault
``v`` covers columns ``x in {2*(v % (X//2)), +1}`` at row ``y = v // (X//2)``
on every layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterator, List, Tuple


class Port(IntEnum):
    """Router ports.  The integer value doubles as the 3-bit sideband code and
    as the tie-break order between paths."""

    XPlus = 0
    XMinus = 1
    YPlus = 2
    YMinus = 3
    ZPlus = 4
    ZMinus = 5
    Local = 6

    @property
    def opposite(self) -> "Port":
        if self is Port.Local:
            raise ValueError("Local port has no opposite")
        return Port(self.value ^ 1)

    @property
    def is_vertical(self) -> bool:
        return self in (Port.ZPlus, Port.ZMinus)


MESH_PORTS = (Port.XPlus, Port.XMinus, Port.YPlus, Port.YMinus, Port.ZPlus, Port.ZMinus)

_DELTA = {
    Port.XPlus: (1, 0, 0),
    Port.XMinus: (-1, 0, 0),
    Port.YPlus: (0, 1, 0),
    Port.YMinus: (0, -1, 0),
    Port.ZPlus: (0, 0, 1),
    Port.ZMinus: (0, 0, -1),
}


@dataclass(frozen=True, order=True)
class BankCoord:
    x: int
    y: int
    z: int

    def step(self, port: Port, hops: int = 1) -> "BankCoord":
        dx, dy, dz = _DELTA[port]
        return BankCoord(self.x + dx * hops, self.y + dy * hops, self.z + dz * hops)

    def manhattan(self, other: "BankCoord") -> int:
        return abs(self.x - other.x) + abs(self.y - other.y) + abs(self.z - other.z)

    def __str__(self) -> str:
        return f"({self.x},{self.y},{self.z})"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    src: BankCoord
    port: Port
    dst: BankCoord


@dataclass
class PathDag:
    """All minimal paths from ``src`` to ``dst``.

    ``dist`` is the hop latency of each node from the source (a compressed
    vertical jump counts as one hop).  ``edges`` maps a node to its outgoing
    productive edges in port order.
    """

    src: BankCoord
    dst: BankCoord
    order: List[BankCoord]
    dist: Dict[BankCoord, int]
    edges: Dict[BankCoord, List[Edge]]

    @property
    def hops(self) -> int:
        return self.dist[self.dst] if self.order else 0

    def edge_count(self) -> int:
        return sum(len(v) for v in self.edges.values())

    def preds(self) -> Dict[BankCoord, List[Edge]]:
        out: Dict[BankCoord, List[Edge]] = {n: [] for n in self.order}
        for node in self.order:
            for e in self.edges[node]:
                out[e.dst].append(e)
        return out

    def paths(self) -> Iterator[Tuple[Edge, ...]]:
        """Every source-to-destination path, in lexicographic port order."""
        if not self.order:
            return

        def walk(node: BankCoord, acc: Tuple[Edge, ...]):
            if node == self.dst:
                yield acc
                return
            for e in self.edges[node]:
                yield from walk(e.dst, acc + (e,))

        yield from walk(self.src, ())


@dataclass(frozen=True)
class Mesh:
    """An ``X x Y x Z`` mesh of banks, two x-adjacent banks per vault slice."""

    X: int = 8
    Y: int = 8
    Z: int = 4
    banks_per_slice: int = 2

    def __post_init__(self):
        if min(self.X, self.Y, self.Z) < 1:
            raise MeshError("mesh dimensions must be positive")
        if self.banks_per_slice < 1 or self.X % self.banks_per_slice:
            raise MeshError("X must be a multiple of banks_per_slice")

    @property
    def num_banks(self) -> int:
        return self.X * self.Y * self.Z

    @property
    def num_vaults(self) -> int:
        return (self.X // self.banks_per_slice) * self.Y

    @property
    def banks_per_vault(self) -> int:
        return self.banks_per_slice * self.Z

    def contains(self, c: BankCoord) -> bool:
        return 0 <= c.x < self.X and 0 <= c.y < self.Y and 0 <= c.z < self.Z

    def coord_of(self, bank: int) -> BankCoord:
        if not 0 <= bank < self.num_banks:
            raise MeshError(f"bank id {bank} out of range [0, {self.num_banks})")
        x = bank % self.X
        y = (bank // self.X) % self.Y
        z = bank // (self.X * self.Y)
        return BankCoord(x, y, z)

    def bank_of(self, c: BankCoord) -> int:
        if not self.contains(c):
            raise MeshError(f"coordinate {c} outside {self.X}x{self.Y}x{self.Z} mesh")
        return c.x + self.X * c.y + self.X * self.Y * c.z

    def vault_of(self, c: BankCoord) -> int:
        return c.x // self.banks_per_slice + (self.X // self.banks_per_slice) * c.y

    def bank_in_vault(self, c: BankCoord) -> int:
        """Index of the bank within its vault (the sideband bank-select field)."""
        return c.x % self.banks_per_slice + self.banks_per_slice * c.z

    def coord_in_vault(self, vault: int, index: int) -> BankCoord:
        if not 0 <= vault < self.num_vaults:
            raise MeshError(f"vault {vault} out of range")
        if not 0 <= index < self.banks_per_vault:
            raise MeshError(f"bank index {index} out of range for a vault")
        per_row = self.X // self.banks_per_slice
        x = (vault % per_row) * self.banks_per_slice + index % self.banks_per_slice
        return BankCoord(x, vault // per_row, index // self.banks_per_slice)

    def neighbor(self, c: BankCoord, port: Port) -> BankCoord | None:
        n = c.step(port)
        return n if self.contains(n) else None

    def shortest_path_dag(self, src: BankCoord, dst: BankCoord, light: bool = False) -> PathDag:
        """DAG of all minimal paths.

        With ``light=True`` vertical movement is a single jump straight to the
        destination layer over the vault bus, taken from any node of the
        source layer on a minimal planar route.
        """
        for c in (src, dst):
            if not self.contains(c):
                raise MeshError(f"coordinate {c} outside mesh")
        if src == dst:
            return PathDag(src, dst, [], {}, {})

        planar = []
        if dst.x != src.x:
            planar.append(Port.XPlus if dst.x > src.x else Port.XMinus)
        if dst.y != src.y:
            planar.append(Port.YPlus if dst.y > src.y else Port.YMinus)
        zport = None
        if dst.z != src.z:
            zport = Port.ZPlus if dst.z > src.z else Port.ZMinus

        def in_box(c: BankCoord) -> bool:
            return (
                min(src.x, dst.x) <= c.x <= max(src.x, dst.x)
                and min(src.y, dst.y) <= c.y <= max(src.y, dst.y)
                and min(src.z, dst.z) <= c.z <= max(src.z, dst.z)
            )

        dist: Dict[BankCoord, int] = {src: 0}
        edges: Dict[BankCoord, List[Edge]] = {}
        frontier = [src]
        order: List[BankCoord] = []
        while frontier:
            frontier.sort()
            order.extend(frontier)
            nxt: Dict[BankCoord, None] = {}
            for node in frontier:
                out: List[Edge] = []
                for p in planar:
                    n = node.step(p)
                    if in_box(n):
                        out.append(Edge(node, p, n))
                if zport is not None and node.z != dst.z:
                    if light:
                        if node.z == src.z:
                            out.append(Edge(node, zport, BankCoord(node.x, node.y, dst.z)))
                    else:
                        out.append(Edge(node, zport, node.step(zport)))
                out.sort(key=lambda e: e.port)
                edges[node] = out
                for e in out:
                    dist[e.dst] = dist[node] + 1
                    nxt[e.dst] = None
            frontier = list(nxt)
        return PathDag(src, dst, order, dist, edges)
