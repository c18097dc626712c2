"""Two-dimensional coordinate-space overlay.

Keys hash onto the unit square, which is tiled by rectangular zones, one per
node.  Routing is greedy: each hop moves to the neighbor whose zone center is
closest to the target point.  Zone splits (joins) and merges (leaves) keep the
tiling exact and report bit-vector patches so per-key interest vectors at
affected nodes can be resized and remapped.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

NodeId = int
KeyName = str

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class RoutingError(Exception):
    pass


class TopologyError(Exception):
    pass


class HandoverPolicy(Enum):
    """What happens to a node's stored entries when zones change hands."""

    COPY = "copy"
    NONE = "none"


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class Zone:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def contains(self, p: Point) -> bool:
        # Half-open on both axes so shared borders have a unique owner.
        return self.x_lo <= p.x < self.x_hi and self.y_lo <= p.y < self.y_hi

    @property
    def center(self) -> Point:
        return Point((self.x_lo + self.x_hi) / 2.0, (self.y_lo + self.y_hi) / 2.0)

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def height(self) -> float:
        return self.y_hi - self.y_lo

    @property
    def area(self) -> float:
        return self.width * self.height

    def center_dist2(self, p: Point) -> float:
        c = self.center
        return (c.x - p.x) ** 2 + (c.y - p.y) ** 2


@dataclass(frozen=True)
class BitVectorPatch:
    """Neighbor-list change at one node after a membership event.

    Interest bit vectors are indexed by neighbor slot; consumers remap each
    bit from its position in ``old_neighbors`` to the position the same
    neighbor occupies in ``new_neighbors``, dropping bits of ex-neighbors and
    starting new neighbors clear.
    """

    node: NodeId
    old_neighbors: tuple[NodeId, ...]
    new_neighbors: tuple[NodeId, ...]


@dataclass(frozen=True)
class Topology:
    zones: dict[NodeId, Zone]
    neighbors: dict[NodeId, tuple[NodeId, ...]]

    @property
    def nodes(self) -> list[NodeId]:
        return sorted(self.zones)

    def zone_of(self, node: NodeId) -> Zone:
        return self.zones[node]

    def neighbors_of(self, node: NodeId) -> tuple[NodeId, ...]:
        return self.neighbors[node]


def _mix64(h: int) -> int:
    # splitmix64 finisher: avalanches the raw FNV value so both 32-bit halves
    # are well distributed even for short, similar keys.
    h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & _MASK64
    return h ^ (h >> 31)


def hash_key(key: KeyName) -> Point:
    """Hash a key to a point in [0,1)^2.

    FNV-1a over the UTF-8 bytes followed by an avalanche mix; the high 32
    bits become the x fraction and the low 32 bits the y fraction.  Fixed
    constants, so authority placement is independent of any run seed.
    """
    if not key:
        raise ValueError("key must be a non-empty string")
    h = _FNV_OFFSET
    for b in key.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    h = _mix64(h)
    return Point((h >> 32) / 4294967296.0, (h & 0xFFFFFFFF) / 4294967296.0)


def build_grid(n: int) -> Topology:
    """Build a regular grid of n equal-area zones, n = 2^k with 3 <= k <= 12.

    The grid is 2^ceil(k/2) columns by 2^floor(k/2) rows, node ids row-major,
    4-neighborhood without wraparound.
    """
    if n < 8 or n > 4096 or n & (n - 1):
        raise ValueError(f"node count must be a power of two in [8, 4096], got {n}")
    k = n.bit_length() - 1
    cols = 1 << ((k + 1) // 2)
    rows = 1 << (k // 2)
    zones: dict[NodeId, Zone] = {}
    neighbors: dict[NodeId, tuple[NodeId, ...]] = {}
    for r in range(rows):
        for c in range(cols):
            nid = r * cols + c
            zones[nid] = Zone(c / cols, (c + 1) / cols, r / rows, (r + 1) / rows)
            nbrs = []
            if c > 0:
                nbrs.append(nid - 1)
            if c < cols - 1:
                nbrs.append(nid + 1)
            if r > 0:
                nbrs.append(nid - cols)
            if r < rows - 1:
                nbrs.append(nid + cols)
            neighbors[nid] = tuple(sorted(nbrs))
    return Topology(zones=zones, neighbors=neighbors)


def locate(topology: Topology, p: Point) -> NodeId:
    """Return the node whose zone contains p (zones tile the space)."""
    for nid in sorted(topology.zones):
        if topology.zones[nid].contains(p):
            return nid
    raise TopologyError(f"no zone contains {p}; tiling is broken")


def authority_of(topology: Topology, key: KeyName) -> NodeId:
    return locate(topology, hash_key(key))


def route_next_hop(topology: Topology, at: NodeId, target: Point) -> NodeId:
    """Greedy next hop toward target.

    A neighbor whose zone contains the target always wins (this is also what
    guarantees the walk terminates at the owner); otherwise the neighbor with
    the closest zone center, ties to the lowest node id.
    """
    if topology.zones[at].contains(target):
        raise RoutingError(f"target {target} already lies inside node {at}'s zone")
    best = -1
    best_d = float("inf")
    for nbr in topology.neighbors[at]:  # ascending ids, so < keeps lowest on ties
        z = topology.zones[nbr]
        if z.contains(target):
            return nbr
        d = z.center_dist2(target)
        if d < best_d:
            best_d = d
            best = nbr
    return best


def query_path(topology: Topology, frm: NodeId, key: KeyName) -> list[NodeId]:
    """The hop sequence a query takes from ``frm`` to the key's authority."""
    target = hash_key(key)
    path = [frm]
    seen = {frm}
    cur = frm
    while not topology.zones[cur].contains(target):
        cur = route_next_hop(topology, cur, target)
        if cur in seen:
            raise RoutingError(f"routing cycle at node {cur} for key {key!r}")
        seen.add(cur)
        path.append(cur)
    return path


def _adjacent(a: Zone, b: Zone) -> bool:
    # Positive-length shared border; corner contact does not count.
    if a.x_hi == b.x_lo or b.x_hi == a.x_lo:
        return min(a.y_hi, b.y_hi) - max(a.y_lo, b.y_lo) > 0
    if a.y_hi == b.y_lo or b.y_hi == a.y_lo:
        return min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo) > 0
    return False


def _rebuild(zones: dict[NodeId, Zone],
             neighbors: dict[NodeId, tuple[NodeId, ...]],
             affected: set[NodeId],
             candidates: set[NodeId]) -> tuple[Topology, list[BitVectorPatch]]:
    patches = []
    new_neighbors = dict(neighbors)
    for nid in sorted(affected):
        pool = set(neighbors.get(nid, ())) | candidates
        pool.discard(nid)
        pool &= zones.keys()
        updated = tuple(sorted(m for m in pool if _adjacent(zones[nid], zones[m])))
        old = neighbors.get(nid, ())
        if updated != old:
            patches.append(BitVectorPatch(nid, old, updated))
        new_neighbors[nid] = updated
    return Topology(zones=zones, neighbors=new_neighbors), patches


def node_join(topology: Topology, splitting: NodeId, new_id: NodeId
              ) -> tuple[Topology, list[BitVectorPatch]]:
    """Split ``splitting``'s zone along its longer dimension; the new node
    takes the upper half.  Returns the new topology plus the bit-vector
    patches for every node whose neighbor list changed.

    Entry handover between the two nodes is the caller's concern: the
    topology layer has no entries, only zones and adjacency.
    """
    if splitting not in topology.zones:
        raise TopologyError(f"node {splitting} not in topology")
    if new_id in topology.zones:
        raise TopologyError(f"node id {new_id} already present")
    z = topology.zones[splitting]
    if z.width >= z.height:
        mid = (z.x_lo + z.x_hi) / 2.0
        low, high = Zone(z.x_lo, mid, z.y_lo, z.y_hi), Zone(mid, z.x_hi, z.y_lo, z.y_hi)
    else:
        mid = (z.y_lo + z.y_hi) / 2.0
        low, high = Zone(z.x_lo, z.x_hi, z.y_lo, mid), Zone(z.x_lo, z.x_hi, mid, z.y_hi)
    for half in (low, high):
        ratio = max(half.width, half.height) / min(half.width, half.height)
        if ratio > 2.0 + 1e-9:
            raise TopologyError(f"split of node {splitting} would create aspect ratio {ratio:.3f}")
    zones = dict(topology.zones)
    zones[splitting] = low
    zones[new_id] = high
    affected = set(topology.neighbors[splitting]) | {splitting, new_id}
    return _rebuild(zones, dict(topology.neighbors), affected, set(affected))


def mergeable_neighbors(topology: Topology, node: NodeId) -> list[NodeId]:
    """Neighbors whose zone unions with ``node``'s zone to a rectangle."""
    z = topology.zones[node]
    out = []
    for nbr in topology.neighbors[node]:
        m = topology.zones[nbr]
        same_y = m.y_lo == z.y_lo and m.y_hi == z.y_hi
        same_x = m.x_lo == z.x_lo and m.x_hi == z.x_hi
        if same_y and (m.x_hi == z.x_lo or z.x_hi == m.x_lo):
            out.append(nbr)
        elif same_x and (m.y_hi == z.y_lo or z.y_hi == m.y_lo):
            out.append(nbr)
    return out


def node_leave(topology: Topology, leaving: NodeId
               ) -> tuple[Topology, list[BitVectorPatch], NodeId]:
    """Remove ``leaving``; the lowest-id rectangle-mergeable neighbor absorbs
    its zone.  Returns (topology, patches, absorber)."""
    if leaving not in topology.zones:
        raise TopologyError(f"node {leaving} not in topology")
    candidates = mergeable_neighbors(topology, leaving)
    if not candidates:
        raise TopologyError(f"no neighbor of {leaving} merges to a rectangle")
    absorber = min(candidates)
    z, m = topology.zones[leaving], topology.zones[absorber]
    union = Zone(min(z.x_lo, m.x_lo), max(z.x_hi, m.x_hi),
                 min(z.y_lo, m.y_lo), max(z.y_hi, m.y_hi))
    zones = dict(topology.zones)
    del zones[leaving]
    zones[absorber] = union
    neighbors = dict(topology.neighbors)
    del neighbors[leaving]
    affected = (set(topology.neighbors[leaving]) | set(topology.neighbors[absorber])
                | {absorber}) - {leaving}
    topo, patches = _rebuild(zones, neighbors, affected, affected | {absorber})
    return topo, patches, absorber


def check_tiling(topology: Topology, tol: float = 1e-12) -> None:
    """Raise unless the zones tile [0,1)^2 exactly (test helper)."""
    total = sum(z.area for z in topology.zones.values())
    if abs(total - 1.0) > tol:
        raise TopologyError(f"zone areas sum to {total}, expected 1")
    zs = sorted(topology.zones.items())
    for i, (na, a) in enumerate(zs):
        for nb, b in zs[i + 1:]:
            ox = min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo)
            oy = min(a.y_hi, b.y_hi) - max(a.y_lo, b.y_lo)
            if ox > tol and oy > tol:
                raise TopologyError(f"zones of {na} and {nb} overlap")
