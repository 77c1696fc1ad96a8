"""Deterministic discrete-event kernel.

One :class:`Simulator` runs one scenario on one thread. Events pop in
``(fire_at_ms, seq)`` order; all randomness comes from streams seeded by the
scenario seed, and mobility/traffic draws never depend on protocol behavior,
so TORA and PDTORA runs with the same seed see the same node movement and the
same offered load.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Iterable, Optional

import numpy as np

from pdtora import protocol as proto
from pdtora.config import Flow, ScenarioConfig
from pdtora.energy import EnergyState, Radio
from pdtora.heights import format_height
from pdtora.protocol import (
    Broadcast, Clr, Data, DeliverData, DetectPartition, DropPacket, DropReason, ForwardQry,
    NodeState, Qry, SetHeight, Unicast, Upd,
)
from pdtora.qos import NttEstimator


class EventKind(IntEnum):
    MOBILITY_TICK = 0  # moves nodes, then rechecks links
    PACKET_DELIVERY = 1
    ENQUEUE = 2  # a packet finished node processing and joins the MAC queue
    TRAFFIC_EMIT = 3
    ROUTE_RETRY = 4
    LINK_SCRIPT = 5  # scripted link change on an explicit topology


@dataclass(frozen=True, order=True)
class Event:
    fire_at_ms: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, fire_at_ms: float, kind: EventKind, payload=None) -> None:
        heapq.heappush(self._heap, (fire_at_ms, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> Event:
        return Event(*heapq.heappop(self._heap))

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


# mobility


@dataclass(frozen=True, slots=True)
class MobilityState:
    position: tuple[float, float]
    waypoint: tuple[float, float]
    speed_m_s: float
    paused_until_ms: float
    area: tuple[float, float] = (670.0, 670.0)
    min_speed_m_s: float = 1.0
    max_speed_m_s: float = 20.0
    pause_ms: float = 10_000.0
    t_ms: float = 0.0


def _draw_leg(m: MobilityState, rng: random.Random) -> tuple[tuple[float, float], float]:
    wp = (rng.uniform(0.0, m.area[0]), rng.uniform(0.0, m.area[1]))
    lo = min(m.min_speed_m_s, m.max_speed_m_s)
    return wp, rng.uniform(lo, m.max_speed_m_s)


def initial_mobility(rng: random.Random, area, min_speed, max_speed, pause_ms, position=None) -> MobilityState:
    pos = position if position is not None else (rng.uniform(0.0, area[0]), rng.uniform(0.0, area[1]))
    m = MobilityState(pos, pos, 0.0, 0.0, tuple(area), min_speed, max_speed, pause_ms, 0.0)
    if max_speed <= 0:
        return m
    wp, speed = _draw_leg(m, rng)
    return replace(m, waypoint=wp, speed_m_s=speed)


def step_mobility(m: MobilityState, dt_ms: float, rng: random.Random) -> MobilityState:
    """Advance a random-waypoint walker by ``dt_ms``.

    A walker that reaches its waypoint stays there for ``pause_ms``, then
    draws a uniform waypoint in the area and a uniform speed in
    ``[min_speed, max_speed]``.
    """
    if dt_ms <= 0:
        raise ValueError("dt_ms must be positive")
    start, end = m.t_ms, m.t_ms + dt_ms
    if m.max_speed_m_s <= 0:
        return replace(m, t_ms=end)
    pos, wp, speed, paused_until = m.position, m.waypoint, m.speed_m_s, m.paused_until_ms
    moving_from = start
    if pos == wp:
        # at the waypoint: sit out the pause, then head somewhere new
        if paused_until >= end:
            return replace(m, t_ms=end)
        moving_from = max(start, paused_until)
        wp, speed = _draw_leg(m, rng)
    travel = speed * (end - moving_from) / 1000.0
    dx, dy = wp[0] - pos[0], wp[1] - pos[1]
    dist = math.hypot(dx, dy)
    if travel >= dist:
        arrived_at = end - (travel - dist) / speed * 1000.0 if speed > 0 else end
        pos, paused_until = wp, arrived_at + m.pause_ms
    else:
        f = travel / dist
        pos = (pos[0] + dx * f, pos[1] + dy * f)
    return MobilityState(pos, wp, speed, paused_until, m.area, m.min_speed_m_s, m.max_speed_m_s, m.pause_ms, end)


# radio


@dataclass(frozen=True)
class RadioModel:
    range_m: float = 250.0
    bitrate_bps: float = 2_000_000.0

    def tx_time_ms(self, size_bits: int) -> float:
        return size_bits * 1000.0 / self.bitrate_bps


def link_set(positions, range_m: float, alive=None) -> set[tuple[int, int]]:
    """Undirected links ``(i, j)`` with ``i < j`` and distance <= range."""
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    diff = p[:, None, :] - p[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    up = d2 <= range_m * range_m
    if alive is not None:
        a = np.asarray(alive, dtype=bool)
        up &= a[:, None] & a[None, :]
    ii, jj = np.nonzero(np.triu(up, k=1))
    return set(zip(ii.tolist(), jj.tolist()))


def recompute_links(positions, range_m: float, previous: set[tuple[int, int]], alive=None):
    """Return ``(current, went_up, went_down)``; transitions are sorted."""
    current = link_set(positions, range_m, alive)
    return current, sorted(current - previous), sorted(previous - current)


# traffic


def make_flows(cfg: ScenarioConfig, rng: random.Random) -> list[Flow]:
    """Flows for a run. Explicit pairs run for the whole simulation; random
    slots are re-drawn every ``session_ms`` when that is set."""
    def flow(s, d, start, stop):
        return Flow(s, d, cfg.packet_bits, cfg.packet_interval_ms, start, stop, cfg.qos)

    def stagger():
        return rng.uniform(0.0, cfg.flow_start_max_ms) if cfg.flow_start_max_ms > 0 else 0.0

    if cfg.flows:
        return [flow(f.src, f.dst, stagger(), cfg.sim_end_ms) for f in cfg.flows]
    all_pairs = [(s, d) for s in range(cfg.num_nodes) for d in range(cfg.num_nodes) if s != d]
    k = min(cfg.num_flows, len(all_pairs))
    if cfg.session_ms <= 0:
        return [flow(s, d, stagger(), cfg.sim_end_ms) for s, d in rng.sample(all_pairs, k)]
    flows = []
    t = 0.0
    while t < cfg.sim_end_ms:
        stop = min(t + cfg.session_ms, cfg.sim_end_ms)
        for s, d in rng.sample(all_pairs, k):
            flows.append(flow(s, d, t + stagger(), stop))
        t += cfg.session_ms
    return flows


# run products


@dataclass(slots=True)
class DataRecord:
    seq: int
    flow: int
    src: int
    dst: int
    created_at_ms: float
    fate: Optional[str] = None  # "delivered" or a DropReason value; None = in flight
    done_at_ms: Optional[float] = None


@dataclass
class RunResult:
    config: ScenarioConfig
    flows: list[Flow]
    records: list[DataRecord]
    deaths: list[tuple[float, int]]
    trace: list[tuple]
    control_sent: Counter
    control_drops: Counter
    partitions: int
    tx_bits: list[int]
    rx_bits: list[int]
    drained_j: list[float]
    residual_j: list[float]
    final_heights: dict[tuple[int, int], Any]
    events_processed: int

    @property
    def report(self):
        from pdtora.metrics import compute_report
        return compute_report(self)


TRACE_MODES = ("full", "qry", "off")


class Simulator:
    """Single run of a scenario.

    ``topology`` replaces the unit-disc radio with a fixed edge list and
    ``link_script`` then schedules ``(time_ms, i, j, up)`` changes on it;
    both exist for scripted experiments and tests.
    """

    def __init__(self, cfg: ScenarioConfig, trace: str = "full",
                 topology: Optional[Iterable[tuple[int, int]]] = None,
                 link_script: Iterable[tuple[float, int, int, bool]] = ()):
        cfg.validate()
        if trace not in TRACE_MODES:
            raise ValueError(f"trace must be one of {TRACE_MODES}")
        self.cfg = cfg
        self.trace_mode = trace
        self.radio = RadioModel(cfg.range_m, cfg.bitrate_bps)
        self.now = 0.0
        self.events = EventQueue()
        n = cfg.num_nodes
        self.nodes = [
            NodeState(
                i,
                EnergyState.full(cfg.initial_energy_j, cfg.tx_cost_j_per_bit, cfg.rx_cost_j_per_bit),
                NttEstimator(cfg.ntt_static_ms, cfg.ntt_alpha),
                qos_enabled=cfg.qos_enabled,
                dup_window_ms=cfg.qry_retry_ms / 2,
            )
            for i in range(n)
        ]
        self.ewma = cfg.ntt_mode == "ewma"
        self.proc_ms = [cfg.ntt_static_ms] * n
        self.topology = None if topology is None else {(min(a, b), max(a, b)) for a, b in topology}
        self.link_script = sorted(link_script)
        self.adj: list[set[int]] = [set() for _ in range(n)]
        self.links: set[tuple[int, int]] = set()
        self.busy = [False] * n
        self.mob_rngs = [random.Random(f"{cfg.seed}:mobility:{i}") for i in range(n)]
        self.mobility = [
            initial_mobility(self.mob_rngs[i], cfg.area_m, cfg.min_speed_m_s, cfg.max_speed_m_s,
                             cfg.pause_s * 1000.0, cfg.positions[i] if cfg.positions else None)
            for i in range(n)
        ]
        self.flows = make_flows(cfg, random.Random(f"{cfg.seed}:flows"))
        self.flow_qos = {(f.src, f.dst): f.qos for f in self.flows}
        self.records: list[DataRecord] = []
        self.pending: dict[tuple[int, int], deque] = {}
        self.retry_armed: set[tuple[int, int]] = set()
        self.deaths: list[tuple[float, int]] = []
        self.trace: list[tuple] = []
        self.control_sent: Counter = Counter()
        self.control_drops: Counter = Counter()
        self.partitions = 0
        self.tx_bits = [0] * n
        self.rx_bits = [0] * n
        self.drained = [0.0] * n
        self.events_processed = 0
        self._tick = 0

    # tracing

    def _log(self, node, event, kind="-", src="", dst="", detail=""):
        if self.trace_mode == "full":
            self.trace.append((self.now, node, event, kind, src, dst, detail))

    def _log_qry(self, node, event, qry, detail):
        if self.trace_mode != "off":
            self.trace.append((self.now, node, event, "QRY", qry.src, qry.dst, detail))

    # data ledger

    def _fate(self, data: Data, fate: str) -> None:
        rec = self.records[data.seq]
        if rec.fate is None:
            rec.fate = fate
            rec.done_at_ms = self.now
            if fate == "delivered":
                self._log(data.dst, "deliver", "DATA", data.src, data.dst,
                          f"seq={data.seq};delay={self.now - data.created_at_ms:.6f}")
            else:
                self._log(data.dst, "lost", "DATA", data.src, data.dst, f"seq={data.seq};reason={fate}")

    # actions

    def _apply(self, i: int, actions, delay_ms: float = 0.0, arrived_at: Optional[float] = None) -> None:
        for a in actions:
            t = type(a)
            if t is Broadcast or t is Unicast:
                target = a.to if t is Unicast else None
                if delay_ms > 0:
                    self.events.push(self.now + delay_ms, EventKind.ENQUEUE, (i, target, a.packet, arrived_at))
                else:
                    self._enqueue(i, target, a.packet, arrived_at)
            elif t is DropPacket:
                p = a.packet
                if type(p) is Data:
                    self._fate(p, a.reason.value)
                else:
                    self.control_drops[(p.kind, a.reason.value)] += 1
                    if p.kind == "QRY":
                        self._log_qry(i, "drop", p, f"reason={a.reason.value};residual={self.nodes[i].residual_fraction:.6f}")
                    else:
                        self._log(i, "drop", p.kind, "", p.dst, f"reason={a.reason.value}")
            elif t is DeliverData:
                self._fate(a.packet, "delivered")
            elif t is SetHeight:
                self._log(i, "set_height", "-", "", a.dst, format_height(a.height))
                if a.height is not None and (i, a.dst) in self.pending:
                    self._flush(i, a.dst)
            elif t is ForwardQry:
                q = a.qry
                self._log_qry(i, "forward", q,
                              f"budget_in={a.budget_in_ms!r};budget_out={q.delay_budget_ms!r};ntt={a.ntt_ms!r};"
                              f"residual={a.residual_fraction!r};min_power={q.min_power_fraction!r}")
            elif t is DetectPartition:
                self.partitions += 1
                tau, oid, r = a.ref_level
                self._log(i, "partition", "CLR", "", a.dst, f"level=({tau:g},{oid},{r})")

    # MAC

    def _enqueue(self, i: int, target: Optional[int], packet, arrived_at: Optional[float]) -> None:
        node = self.nodes[i]
        if node.energy.dead_at_ms is not None:
            if type(packet) is Data:
                self._fate(packet, DropReason.DEAD_NODE.value)
            return
        node.packet_queue.append((target, packet, arrived_at))
        if not self.busy[i]:
            self._start_tx(i)

    def _start_tx(self, i: int) -> None:
        node = self.nodes[i]
        q = node.packet_queue
        adj = self.adj[i]
        while q:
            target, packet, arrived_at = q.popleft()
            is_data = type(packet) is Data
            if target is not None and target not in adj:
                if not is_data:
                    continue
                # next hop left while we were queued: route again
                acts = proto.forward_data(node, packet)
                a = acts[0]
                if type(a) is not Unicast:
                    self._apply(i, acts)
                    continue
                target = a.to
            bits = packet.size_bits if is_data else self.cfg.ctrl_packet_bits
            self.drained[i] += node.energy.drain(Radio.TX, bits, self.now)
            self.tx_bits[i] += bits
            if node.energy.dead_at_ms is not None:
                if is_data:
                    self._fate(packet, DropReason.DEAD_NODE.value)
                self._die(i)
                return
            if self.ewma and arrived_at is not None:
                node.ntt.observe(self.now - arrived_at)
            if target is None:
                receivers = tuple(sorted(adj))
            else:
                receivers = (target,)
            if not is_data:
                self.control_sent[packet.kind] += 1
            if self.trace_mode == "full":
                self._log(i, "send", packet.kind, getattr(packet, "src", i), packet.dst,
                          proto.describe(packet) + (f";to={target}" if target is not None else ""))
            self.busy[i] = True
            self.events.push(self.now + self.radio.tx_time_ms(bits), EventKind.PACKET_DELIVERY, (i, packet, receivers))
            return
        self.busy[i] = False

    def _deliver(self, i: int, packet, receivers) -> None:
        adj = self.adj[i]
        kind = type(packet)
        is_data = kind is Data
        bits = packet.size_bits if is_data else self.cfg.ctrl_packet_bits
        now = self.now
        for r in receivers:
            if r not in adj:
                if is_data:
                    self._fate(packet, DropReason.LINK.value)
                continue
            node = self.nodes[r]
            self.drained[r] += node.energy.drain(Radio.RX, bits, now)
            self.rx_bits[r] += bits
            if node.energy.dead_at_ms is not None:
                if is_data:
                    self._fate(packet, DropReason.DEAD_NODE.value)
                self._die(r)
                continue
            delay = self.proc_ms[r]
            if kind is Qry:
                acts = proto.handle_qry(node, packet, now)
                if packet.dst == r:
                    delay = 0.0
            elif kind is Upd:
                acts = proto.handle_upd(node, packet, i, now)
            elif kind is Clr:
                acts = proto.handle_clr(node, packet, i, now)
            else:
                acts = proto.forward_data(node, packet)
            if acts:
                self._apply(r, acts, delay, now)
        if self.nodes[i].energy.dead_at_ms is None:
            self._start_tx(i)
        else:
            self.busy[i] = False

    # node death

    def _die(self, i: int) -> None:
        node = self.nodes[i]
        self.deaths.append((self.now, i))
        self._log(i, "death", detail=f"residual={node.energy.residual_j!r}")
        self.busy[i] = False
        while node.packet_queue:
            _, packet, _ = node.packet_queue.popleft()
            if type(packet) is Data:
                self._fate(packet, DropReason.DEAD_NODE.value)
        for key in [k for k in self.pending if k[0] == i]:
            for data in self.pending.pop(key):
                self._fate(data, DropReason.DEAD_NODE.value)
        for j in sorted(self.adj[i]):
            self._link_down(i, j)

    # links

    def _link_down(self, i: int, j: int) -> None:
        a, b = (i, j) if i < j else (j, i)
        self.links.discard((a, b))
        self.adj[i].discard(j)
        self.adj[j].discard(i)
        self._log(i, "link_down", detail=f"nbr={j}")
        self._log(j, "link_down", detail=f"nbr={i}")
        for x, y in ((i, j), (j, i)):
            if self.nodes[x].energy.dead_at_ms is None:
                acts = proto.on_link_event(self.nodes[x], y, False, self.now)
                if acts:
                    self._apply(x, acts)

    def _view(self, i: int):
        node = self.nodes[i]
        return {dst: (ds.height, proto.delay_to_dst(node, ds))
                for dst, ds in node.dests.items() if ds.height is not None}

    def _link_up(self, i: int, j: int) -> None:
        self.links.add((i, j))
        self.adj[i].add(j)
        self.adj[j].add(i)
        self._log(i, "link_up", detail=f"nbr={j}")
        self._log(j, "link_up", detail=f"nbr={i}")
        vi, vj = self._view(i), self._view(j)
        self._apply(i, proto.on_link_event(self.nodes[i], j, True, self.now, vj))
        self._apply(j, proto.on_link_event(self.nodes[j], i, True, self.now, vi))

    def _recheck_links(self) -> None:
        alive = [n.energy.dead_at_ms is None for n in self.nodes]
        if self.topology is not None:
            current = {(a, b) for a, b in self.topology if alive[a] and alive[b]}
            ups, downs = sorted(current - self.links), sorted(self.links - current)
        else:
            positions = [m.position for m in self.mobility]
            _, ups, downs = recompute_links(positions, self.cfg.range_m, self.links, alive)
        for i, j in downs:
            if (i, j) in self.links:
                self._link_down(i, j)
        for i, j in ups:
            if self.nodes[i].energy.dead_at_ms is None and self.nodes[j].energy.dead_at_ms is None:
                self._link_up(i, j)

    def _scripted_link(self, i: int, j: int, up: bool) -> None:
        a, b = min(i, j), max(i, j)
        if up:
            self.topology.add((a, b))
        else:
            self.topology.discard((a, b))
        self._recheck_links()

    def set_ntt(self, i: int, ntt_ms: float) -> None:
        """Give node ``i`` its own node traverse time (estimate and processing delay)."""
        self.nodes[i].ntt.value = float(ntt_ms)
        self.proc_ms[i] = float(ntt_ms)

    def set_residual_fraction(self, i: int, fraction: float) -> None:
        e = self.nodes[i].energy
        e.residual_j = e.initial_j * fraction

    # traffic and source buffering

    def _emit(self, f: int) -> None:
        flow = self.flows[f]
        seq = len(self.records)
        data = Data(flow.src, flow.dst, seq, flow.packet_bits, self.now,
                    flow.qos if self.cfg.qos_enabled else None)
        self.records.append(DataRecord(seq, f, flow.src, flow.dst, self.now))
        nxt = self.now + flow.interval_ms
        if nxt < flow.stop_ms:
            self.events.push(nxt, EventKind.TRAFFIC_EMIT, f)
        node = self.nodes[flow.src]
        if node.energy.dead_at_ms is not None:
            self._fate(data, DropReason.DEAD_NODE.value)
            return
        acts = proto.forward_data(node, data)
        if type(acts[0]) is Unicast:
            self._apply(flow.src, acts)
            return
        key = (flow.src, flow.dst)
        self.pending.setdefault(key, deque()).append(data)
        self._apply(flow.src, proto.initiate_route(node, flow.dst, flow.qos))
        self._arm_retry(key)

    def _arm_retry(self, key) -> None:
        if key not in self.retry_armed:
            self.retry_armed.add(key)
            self.events.push(self.now + self.cfg.qry_retry_ms, EventKind.ROUTE_RETRY, key)

    def _flush(self, i: int, dst: int) -> None:
        buf = self.pending.get((i, dst))
        node = self.nodes[i]
        while buf:
            acts = proto.forward_data(node, buf[0])
            if type(acts[0]) is not Unicast:
                return
            buf.popleft()
            self._apply(i, acts)
        self.pending.pop((i, dst), None)

    def _retry(self, key) -> None:
        self.retry_armed.discard(key)
        buf = self.pending.get(key)
        if not buf:
            self.pending.pop(key, None)
            return
        i, dst = key
        while buf and self.now - buf[0].created_at_ms >= self.cfg.route_timeout_ms:
            self._fate(buf.popleft(), DropReason.NO_ROUTE.value)
        if not buf:
            self.pending.pop(key, None)
            return
        node = self.nodes[i]
        if proto.downstream(node, dst):
            self._flush(i, dst)
            return
        node.dest(dst).route_required = False
        self._apply(i, proto.initiate_route(node, dst, self.flow_qos.get(key, self.cfg.qos)))
        self._arm_retry(key)

    # main loop

    def _mobility_tick(self) -> None:
        dt = self.cfg.mobility_tick_ms
        self.mobility = [step_mobility(m, dt, rng) for m, rng in zip(self.mobility, self.mob_rngs)]
        self._recheck_links()
        self._tick += 1
        nxt = (self._tick + 1) * dt
        if nxt <= self.cfg.sim_end_ms:
            self.events.push(nxt, EventKind.MOBILITY_TICK)

    def _schedule_initial(self) -> None:
        cfg = self.cfg
        if self.topology is not None:
            for t, i, j, up in self.link_script:
                self.events.push(t, EventKind.LINK_SCRIPT, (i, j, up))
        elif cfg.max_speed_m_s > 0 and cfg.mobility_tick_ms <= cfg.sim_end_ms:
            self.events.push(cfg.mobility_tick_ms, EventKind.MOBILITY_TICK)
        for f, flow in enumerate(self.flows):
            if flow.start_ms < flow.stop_ms:
                self.events.push(flow.start_ms, EventKind.TRAFFIC_EMIT, f)

    def run(self) -> RunResult:
        cfg = self.cfg
        self._recheck_links()
        self._schedule_initial()
        heap = self.events._heap
        end = cfg.sim_end_ms
        pop = heapq.heappop
        processed = 0
        while heap:
            t, _, kind, payload = pop(heap)
            if t > end:
                break
            self.now = t
            processed += 1
            if kind == EventKind.PACKET_DELIVERY:
                self._deliver(*payload)
            elif kind == EventKind.ENQUEUE:
                i, target, packet, arrived = payload
                self._enqueue(i, target, packet, arrived)
            elif kind == EventKind.TRAFFIC_EMIT:
                self._emit(payload)
            elif kind == EventKind.MOBILITY_TICK:
                self._mobility_tick()
            elif kind == EventKind.ROUTE_RETRY:
                self._retry(payload)
            else:
                self._scripted_link(*payload)
        self.now = end
        # data still waiting for a route at the source never got one
        for key in sorted(self.pending):
            for data in self.pending[key]:
                self._fate(data, DropReason.NO_ROUTE.value)
        self.pending.clear()
        self.events_processed = processed
        heights = {(n.id, dst): ds.height for n in self.nodes for dst, ds in n.dests.items()}
        return RunResult(
            config=cfg, flows=self.flows, records=self.records, deaths=self.deaths, trace=self.trace,
            control_sent=self.control_sent, control_drops=self.control_drops, partitions=self.partitions,
            tx_bits=self.tx_bits, rx_bits=self.rx_bits, drained_j=self.drained,
            residual_j=[n.energy.residual_j for n in self.nodes], final_heights=heights,
            events_processed=processed,
        )


def run(cfg: ScenarioConfig, trace: str = "full") -> RunResult:
    """Run one scenario to ``sim_end_ms``; identical inputs give identical results."""
    return Simulator(cfg, trace).run()
