"""Per-node TORA / PDTORA state machine.

Handlers take a :class:`NodeState`, mutate only that state and return a list
of actions for the simulation kernel to carry out. They never touch the
kernel directly, so every handler can be driven by hand in tests.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from pdtora.energy import EnergyState
from pdtora.heights import Height, MaybeHeight, destination_height, format_height
from pdtora.qos import Admit, NttEstimator, QosConstraint, Reject, admit_query


class DropReason(Enum):
    POWER_REJECT = "PowerReject"
    DELAY_REJECT = "DelayReject"
    DUPLICATE = "Duplicate"
    STALE = "Stale"
    NO_ROUTE = "NoRoute"
    DEAD_NODE = "DeadNode"
    LINK = "LinkLoss"


# packets


@dataclass(frozen=True, slots=True)
class Qry:
    src: int
    dst: int
    min_power_fraction: float
    delay_budget_ms: float

    kind = "QRY"


@dataclass(frozen=True, slots=True)
class Upd:
    dst: int
    # None advertises that the sender lost its route
    sender_height: MaybeHeight
    accumulated_delay_ms: float

    kind = "UPD"


@dataclass(frozen=True, slots=True)
class Clr:
    dst: int
    ref_level: tuple[float, int, int]

    kind = "CLR"


@dataclass(frozen=True, slots=True)
class Data:
    src: int
    dst: int
    seq: int
    size_bits: int
    created_at_ms: float
    qos: Optional[QosConstraint] = None

    kind = "DATA"


Packet = Union[Qry, Upd, Clr, Data]


# actions


@dataclass(frozen=True, slots=True)
class Broadcast:
    packet: Packet


@dataclass(frozen=True, slots=True)
class Unicast:
    to: int
    packet: Packet


@dataclass(frozen=True, slots=True)
class DropPacket:
    reason: DropReason
    packet: Packet


@dataclass(frozen=True, slots=True)
class DeliverData:
    packet: Data


@dataclass(frozen=True, slots=True)
class SetHeight:
    dst: int
    height: MaybeHeight


@dataclass(frozen=True, slots=True)
class DetectPartition:
    dst: int
    ref_level: tuple[float, int, int]


@dataclass(frozen=True, slots=True)
class ForwardQry:
    """Audit record: this node admitted and re-broadcast a query."""

    qry: Qry
    budget_in_ms: float
    ntt_ms: float
    residual_fraction: float


Action = Union[Broadcast, Unicast, DropPacket, DeliverData, SetHeight, DetectPartition, ForwardQry]


@dataclass
class DestState:
    height: MaybeHeight = None
    route_required: bool = False
    neighbor_heights: dict[int, MaybeHeight] = field(default_factory=dict)
    # accumulated delay each neighbor last advertised alongside its height
    neighbor_delays: dict[int, float] = field(default_factory=dict)
    last_upd_time: float = 0.0
    cleared: Optional[tuple[float, int]] = None
    is_destination: bool = False
    # lowest downstream neighbor, maintained on every height change
    best: Optional[int] = None

    def set_height(self, h: MaybeHeight) -> None:
        self.height = h
        self._rescan()

    def set_neighbor(self, j: int, h: MaybeHeight, delay: Optional[float] = None) -> None:
        old = self.neighbor_heights.get(j)
        self.neighbor_heights[j] = h
        if h is None:
            self.neighbor_delays.pop(j, None)
        elif delay is not None:
            self.neighbor_delays[j] = delay
        own = self.height
        if own is None:
            return
        if h is not None and h < own:
            if j == self.best:
                if old is not None and h > old:
                    self._rescan()
            elif self.best is None or h < self.neighbor_heights[self.best]:
                self.best = j
        elif j == self.best:
            self._rescan()

    def drop_neighbor(self, j: int) -> MaybeHeight:
        h = self.neighbor_heights.pop(j, None)
        self.neighbor_delays.pop(j, None)
        if j == self.best:
            self._rescan()
        return h

    def clear_neighbors(self) -> None:
        self.neighbor_heights.clear()
        self.neighbor_delays.clear()
        self.best = None

    def _rescan(self) -> None:
        own = self.height
        best = None
        if own is not None:
            best_h = own
            for j, h in self.neighbor_heights.items():
                if h is not None and h < best_h:
                    best, best_h = j, h
        self.best = best


@dataclass
class NodeState:
    id: int
    energy: EnergyState
    ntt: NttEstimator
    qos_enabled: bool = True
    # a (src, dst) query seen within this window is a duplicate
    dup_window_ms: float = 250.0
    neighbors: set[int] = field(default_factory=set)
    dests: dict[int, DestState] = field(default_factory=dict)
    qry_seen: dict[tuple[int, int], float] = field(default_factory=dict)
    packet_queue: deque = field(default_factory=deque)
    last_tau: float = -math.inf

    @property
    def ntt_ms(self) -> float:
        return self.ntt.value

    @property
    def residual_fraction(self) -> float:
        return self.energy.residual_j / self.energy.initial_j

    def dest(self, dst: int) -> DestState:
        ds = self.dests.get(dst)
        if ds is None:
            ds = DestState()
            if dst == self.id:
                ds.height = destination_height(dst)
                ds.is_destination = True
            self.dests[dst] = ds
        return ds

    def height(self, dst: int) -> MaybeHeight:
        ds = self.dests.get(dst)
        return None if ds is None else ds.height


def downstream(state: NodeState, dst: int) -> list[int]:
    """Neighbors strictly lower than this node for ``dst``, lowest first."""
    ds = state.dests.get(dst)
    if ds is None or ds.height is None:
        return []
    own = ds.height
    lower = [(h, j) for j, h in ds.neighbor_heights.items() if h is not None and h < own]
    lower.sort()
    return [j for _, j in lower]


def delay_to_dst(state: NodeState, ds: DestState) -> Optional[float]:
    """Estimated delay from this node to the destination via its best
    downstream neighbor, counting this node's own NTT."""
    if ds.is_destination:
        return 0.0
    if ds.best is None:
        return None
    return ds.neighbor_delays.get(ds.best, 0.0) + state.ntt_ms


def _admit(state: NodeState, qry: Qry, est: Optional[float]) -> Union[Admit, Reject]:
    if not state.qos_enabled:
        return Admit(qry.delay_budget_ms)
    qos = QosConstraint(qry.min_power_fraction, qry.delay_budget_ms)
    return admit_query(state.residual_fraction, qry.delay_budget_ms, state.ntt_ms, qos, est)


def _reject_reason(result: Reject) -> DropReason:
    return DropReason.POWER_REJECT if result is Reject.POWER else DropReason.DELAY_REJECT


def _set_height(state: NodeState, ds: DestState, dst: int, h: MaybeHeight) -> list[Action]:
    ds.set_height(h)
    if h is None:
        if not state.neighbors:
            return [SetHeight(dst, None)]
        return [SetHeight(dst, None), Broadcast(Upd(dst, None, 0.0))]
    ds.route_required = False
    delay = delay_to_dst(state, ds)
    return [SetHeight(dst, h), Broadcast(Upd(dst, h, state.ntt_ms if delay is None else delay))]


def _erase(ds: DestState, level: tuple[float, int, int]) -> None:
    ds.cleared = (level[0], level[1])
    ds.route_required = False
    ds.clear_neighbors()
    ds.set_height(None)


def _is_erased(ds: DestState, h: MaybeHeight) -> bool:
    return h is not None and ds.cleared is not None and h.tau != 0 and (h.tau, h.oid) == ds.cleared


def _fresh_level(state: NodeState, now: float) -> Height:
    tau = now if now > state.last_tau else math.nextafter(state.last_tau, math.inf)
    state.last_tau = tau
    return Height(tau, state.id, 0, 0, state.id)


def _join_below_lowest(state: NodeState, ds: DestState, dst: int) -> list[Action]:
    # one step above the lowest non-null neighbor
    m = min(h for h in ds.neighbor_heights.values() if h is not None)
    return _set_height(state, ds, dst, Height(m.tau, m.oid, m.r, m.delta + 1, state.id))


# route creation


def initiate_route(state: NodeState, dst: int, qos: QosConstraint) -> list[Action]:
    if dst == state.id:
        return []
    ds = state.dest(dst)
    if ds.route_required or ds.best is not None:
        return []
    ds.route_required = True
    return [Broadcast(Qry(state.id, dst, qos.min_power_fraction, qos.max_delay_ms))]


def handle_qry(state: NodeState, qry: Qry, now: float) -> list[Action]:
    key = (qry.src, qry.dst)
    if qry.src == state.id:
        return [DropPacket(DropReason.DUPLICATE, qry)]
    seen = state.qry_seen.get(key)
    if seen is not None and now - seen < state.dup_window_ms:
        return [DropPacket(DropReason.DUPLICATE, qry)]
    ds = state.dest(qry.dst)

    if ds.is_destination:
        # the destination is not an intermediate hop: no gate, no NTT
        state.qry_seen[key] = now
        return [Broadcast(Upd(qry.dst, ds.height, 0.0))]

    if ds.height is not None:
        est = delay_to_dst(state, ds)
        result = _admit(state, qry, est)
        if isinstance(result, Reject):
            return [DropPacket(_reject_reason(result), qry)]
        state.qry_seen[key] = now
        return [Broadcast(Upd(qry.dst, ds.height, state.ntt_ms if est is None else est))]

    result = _admit(state, qry, None)
    if isinstance(result, Reject):
        return [DropPacket(_reject_reason(result), qry)]
    state.qry_seen[key] = now
    ds.route_required = True
    fwd = replace(qry, delay_budget_ms=result.remaining_budget_ms)
    audit = ForwardQry(fwd, qry.delay_budget_ms, state.ntt_ms, state.residual_fraction)
    return [audit, Broadcast(fwd)]


def handle_upd(state: NodeState, upd: Upd, frm: int, now: float) -> list[Action]:
    if frm not in state.neighbors or upd.dst == state.id:
        return []
    ds = state.dest(upd.dst)
    h = upd.sender_height
    if _is_erased(ds, h):
        return [DropPacket(DropReason.STALE, upd)]
    ds.set_neighbor(frm, h, upd.accumulated_delay_ms)
    ds.last_upd_time = now

    if ds.height is None:
        if ds.route_required and h is not None:
            return _join_below_lowest(state, ds, upd.dst)
        return []
    if ds.best is None:
        return _lost_by_update(state, ds, upd.dst, now)
    return []


# route maintenance


def _lost_by_update(state: NodeState, ds: DestState, dst: int, now: float) -> list[Action]:
    """The node's last downstream link went away because a neighbor's
    height changed."""
    live = [h for h in ds.neighbor_heights.values() if h is not None]
    if not live:
        return _set_height(state, ds, dst, None)
    levels = {h[:3] for h in live}
    if len(levels) > 1:
        # propagate the highest neighbor level, just below its lowest holder
        top = max(levels)
        delta = min(h.delta for h in live if h[:3] == top) - 1
        return _set_height(state, ds, dst, Height(top[0], top[1], top[2], delta, state.id))
    tau, oid, r = levels.pop()
    if tau == 0:
        # every neighbor still hangs off the destination level: treat like a fresh failure
        return _set_height(state, ds, dst, _fresh_level(state, now))
    if r == 0:
        return _set_height(state, ds, dst, Height(tau, oid, 1, 0, state.id))
    if oid == state.id:
        return detect_partition(state, dst)
    return _set_height(state, ds, dst, _fresh_level(state, now))


def detect_partition(state: NodeState, dst: int) -> list[Action]:
    """Erase routes to ``dst`` if every neighbor reflected this node's level."""
    ds = state.dests.get(dst)
    if ds is None or ds.height is None or ds.is_destination:
        return []
    live = [h for h in ds.neighbor_heights.values() if h is not None]
    if not live:
        return []
    level = live[0][:3]
    if level[1] != state.id or level[2] != 1 or any(h[:3] != level for h in live):
        return []
    _erase(ds, level)
    return [DetectPartition(dst, level), SetHeight(dst, None), Broadcast(Clr(dst, level))]


def handle_clr(state: NodeState, clr: Clr, frm: int, now: float) -> list[Action]:
    if clr.dst == state.id or frm not in state.neighbors:
        return []
    ds = state.dest(clr.dst)
    key = (clr.ref_level[0], clr.ref_level[1])
    if ds.cleared == key:
        return [DropPacket(DropReason.DUPLICATE, clr)]
    own = ds.height
    if own is None:
        ds.cleared = key
        for j, h in list(ds.neighbor_heights.items()):
            if h is not None and (h.tau, h.oid) == key:
                ds.drop_neighbor(j)
        return []
    if (own.tau, own.oid) == key:
        _erase(ds, clr.ref_level)
        return [SetHeight(clr.dst, None), Broadcast(clr)]
    # we sit outside the erased level; the sender simply has no route now
    ds.set_neighbor(frm, None)
    if ds.best is None:
        return _lost_by_update(state, ds, clr.dst, now)
    return []


def on_link_event(
    state: NodeState,
    neighbor: int,
    up: bool,
    now: float,
    neighbor_view: Optional[dict[int, tuple[MaybeHeight, Optional[float]]]] = None,
) -> list[Action]:
    """React to a radio link appearing or disappearing.

    On link-up ``neighbor_view`` carries the new neighbor's current
    ``{dst: (height, delay_to_dst)}``, standing in for the height exchange
    done by neighbor discovery.
    """
    actions: list[Action] = []
    if up:
        state.neighbors.add(neighbor)
        for dst, (h, delay) in (neighbor_view or {}).items():
            if dst == state.id:
                continue
            ds = state.dest(dst)
            if _is_erased(ds, h):
                continue
            ds.set_neighbor(neighbor, h, delay)
            if ds.height is None and ds.route_required and h is not None:
                actions += _join_below_lowest(state, ds, dst)
        return actions

    state.neighbors.discard(neighbor)
    for dst, ds in state.dests.items():
        was_best = ds.best == neighbor
        ds.drop_neighbor(neighbor)
        if ds.is_destination or ds.height is None:
            continue
        if not state.neighbors:
            ds.set_height(None)
            actions.append(SetHeight(dst, None))
            continue
        if not was_best or ds.best is not None:
            continue
        own = ds.height
        if any(h is not None and h > own for h in ds.neighbor_heights.values()):
            actions += _set_height(state, ds, dst, _fresh_level(state, now))
        else:
            actions += _set_height(state, ds, dst, None)
    return actions


# data


def forward_data(state: NodeState, data: Data) -> list[Action]:
    if state.energy.dead_at_ms is not None:
        return [DropPacket(DropReason.DEAD_NODE, data)]
    if data.dst == state.id:
        return [DeliverData(data)]
    ds = state.dests.get(data.dst)
    if ds is None or ds.best is None:
        return [DropPacket(DropReason.NO_ROUTE, data)]
    return [Unicast(ds.best, data)]


def describe(packet: Packet) -> str:
    if isinstance(packet, Qry):
        return f"min_power={packet.min_power_fraction!r};budget={packet.delay_budget_ms!r}"
    if isinstance(packet, Upd):
        return f"height={format_height(packet.sender_height)};delay={packet.accumulated_delay_ms!r}"
    if isinstance(packet, Clr):
        tau, oid, r = packet.ref_level
        return f"level=({tau:g},{oid},{r})"
    return f"seq={packet.seq}"
