"""Evaluation metrics computed after the fact from a run's data ledger."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

SUMMARY_COLUMNS = (
    "protocol", "seed", "num_nodes", "max_speed_m_s", "pause_s",
    "pdr", "avg_delay_ms", "loss_ratio", "first_death_ms", "dead_at_end",
)
TIMELINE_COLUMNS = ("time_ms", "dead_count")
TRACE_COLUMNS = ("time_ms", "node", "event", "packet_kind", "src", "dst", "detail")


def packet_delivery_ratio(sent: int, received: int) -> float:
    if received < 0 or received > sent:
        raise ValueError(f"received ({received}) must lie in [0, sent={sent}]")
    return received / sent if sent else 0.0


def average_e2e_delay(delivered: Iterable[tuple[float, float]]) -> Optional[float]:
    """Mean of ``delivered_at - created_at``; ``None`` when nothing arrived."""
    total = 0.0
    n = 0
    for created, arrived in delivered:
        if arrived < created:
            raise ValueError(f"delivery at {arrived} precedes creation at {created}")
        total += arrived - created
        n += 1
    return total / n if n else None


@dataclass
class DeathTimeline:
    points: list[tuple[float, int]] = field(default_factory=list)
    first_death_ms: Optional[float] = None
    _dead: set = field(default_factory=set, repr=False)

    @property
    def count(self) -> int:
        return len(self.points)


def record_death(timeline: DeathTimeline, node: int, at_ms: float) -> DeathTimeline:
    if node in timeline._dead:
        raise ValueError(f"node {node} already dead")
    if timeline.points and at_ms < timeline.points[-1][0]:
        raise ValueError("deaths must be recorded in time order")
    timeline._dead.add(node)
    timeline.points.append((at_ms, len(timeline.points) + 1))
    if timeline.first_death_ms is None:
        timeline.first_death_ms = at_ms
    return timeline


@dataclass
class FlowLedger:
    sent: int = 0
    delivered: int = 0
    in_flight: int = 0
    drops: Counter = field(default_factory=Counter)


@dataclass
class MetricsReport:
    protocol: str
    seed: int
    num_nodes: int
    max_speed_m_s: float
    pause_s: float
    sent: int
    delivered: int
    in_flight: int
    pdr: float
    avg_e2e_delay_ms: Optional[float]
    packet_loss_ratio: float
    dead_node_timeline: list[tuple[float, int]]
    first_death_ms: Optional[float]
    drops: Counter
    per_flow: list[FlowLedger]
    control_drops: Counter
    control_sent: Counter
    partitions: int

    @property
    def dead_at_end(self) -> int:
        return len(self.dead_node_timeline)

    def summary_row(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "num_nodes": self.num_nodes,
            "max_speed_m_s": _num(self.max_speed_m_s),
            "pause_s": _num(self.pause_s),
            "pdr": _num(self.pdr),
            "avg_delay_ms": _num(self.avg_e2e_delay_ms),
            "loss_ratio": _num(self.packet_loss_ratio),
            "first_death_ms": _num(self.first_death_ms),
            "dead_at_end": self.dead_at_end,
        }


def _num(v) -> str:
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def compute_report(result) -> MetricsReport:
    cfg = result.config
    per_flow = [FlowLedger() for _ in result.flows]
    drops: Counter = Counter()
    delivered_pairs = []
    for rec in result.records:
        fl = per_flow[rec.flow]
        fl.sent += 1
        if rec.fate is None:
            fl.in_flight += 1
        elif rec.fate == "delivered":
            fl.delivered += 1
            delivered_pairs.append((rec.created_at_ms, rec.done_at_ms))
        else:
            fl.drops[rec.fate] += 1
            drops[rec.fate] += 1
    sent = sum(f.sent for f in per_flow)
    delivered = sum(f.delivered for f in per_flow)
    pdr = packet_delivery_ratio(sent, delivered)
    timeline = DeathTimeline()
    for at, node in result.deaths:
        record_death(timeline, node, at)
    return MetricsReport(
        protocol=cfg.protocol.value,
        seed=cfg.seed,
        num_nodes=cfg.num_nodes,
        max_speed_m_s=cfg.max_speed_m_s,
        pause_s=cfg.pause_s,
        sent=sent,
        delivered=delivered,
        in_flight=sum(f.in_flight for f in per_flow),
        pdr=pdr,
        avg_e2e_delay_ms=average_e2e_delay(delivered_pairs),
        packet_loss_ratio=1.0 - pdr if sent else 0.0,
        dead_node_timeline=timeline.points,
        first_death_ms=timeline.first_death_ms,
        drops=drops,
        per_flow=per_flow,
        control_drops=Counter(result.control_drops),
        control_sent=Counter(result.control_sent),
        partitions=result.partitions,
    )


# CSV


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_summary(fh, rows: Sequence[dict]) -> None:
    w = _writer(fh)
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([row[c] for c in SUMMARY_COLUMNS])


def write_timeline(fh, timeline: Sequence[tuple[float, int]]) -> None:
    w = _writer(fh)
    w.writerow(TIMELINE_COLUMNS)
    for t, count in timeline:
        w.writerow([f"{t:.6f}", count])


def write_trace(fh, trace: Sequence[tuple]) -> None:
    w = _writer(fh)
    w.writerow(TRACE_COLUMNS)
    for t, node, event, kind, src, dst, detail in trace:
        w.writerow([f"{t:.6f}", node, event, kind, src, dst, detail])


def read_trace(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
