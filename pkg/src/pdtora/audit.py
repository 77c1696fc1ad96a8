"""Invariant checks over run traces and node state.

Every check returns a list of :class:`Violation`; an empty list means the
invariant held. Trace rows may be the in-memory tuples a run produces or the
dicts read back from a trace CSV.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Optional

from pdtora.metrics import TRACE_COLUMNS


@dataclass(frozen=True)
class Violation:
    check: str
    time_ms: float
    node: int
    message: str


def parse_detail(detail: str) -> dict[str, str]:
    out = {}
    for part in filter(None, detail.split(";")):
        k, _, v = part.partition("=")
        out[k] = v
    return out


def _rows(trace: Iterable) -> Iterable[dict]:
    for row in trace:
        if isinstance(row, dict):
            yield row
        else:
            yield dict(zip(TRACE_COLUMNS, row))


def _forwards(trace):
    for row in _rows(trace):
        if row["event"] == "forward" and row["packet_kind"] == "QRY":
            yield float(row["time_ms"]), int(row["node"]), parse_detail(row["detail"])


def audit_qry_budgets(trace: Iterable, charged: bool = True) -> list[Violation]:
    """Each forwarded query loses exactly the forwarder's NTT and stays >= 0.

    With ``charged=False`` (plain TORA) the budget must pass through unchanged.
    """
    bad = []
    for t, node, d in _forwards(trace):
        b_in, b_out, ntt = float(d["budget_in"]), float(d["budget_out"]), float(d["ntt"])
        if b_out < 0:
            bad.append(Violation("qry_budget", t, node, f"negative budget {b_out}"))
        expect = b_in - ntt if charged else b_in
        if b_out != expect:
            bad.append(Violation("qry_budget", t, node, f"budget {b_in} became {b_out}, expected {expect}"))
    return bad


def audit_power_gate(trace: Iterable) -> list[Violation]:
    bad = []
    for t, node, d in _forwards(trace):
        if float(d["residual"]) < float(d["min_power"]):
            bad.append(Violation("power_gate", t, node, f"forwarded at residual {d['residual']} < {d['min_power']}"))
    return bad


def audit_clr_flood(trace: Iterable) -> list[Violation]:
    """No node sends the same CLR (destination, level) twice."""
    sent = Counter()
    first = {}
    for row in _rows(trace):
        if row["event"] == "send" and row["packet_kind"] == "CLR":
            key = (int(row["node"]), str(row["dst"]), parse_detail(row["detail"])["level"])
            sent[key] += 1
            first.setdefault(key, float(row["time_ms"]))
    return [Violation("clr_flood", first[k], k[0], f"CLR {k[2]} for {k[1]} sent {n} times")
            for k, n in sorted(sent.items()) if n > 1]


def audit_ledger(result) -> list[Violation]:
    """Per flow: sent = delivered + drops + in flight, with known drop reasons only."""
    from pdtora.protocol import DropReason

    known = {r.value for r in DropReason} | {"delivered", None}
    bad = []
    per_flow = Counter()
    closed = Counter()
    for rec in result.records:
        per_flow[rec.flow] += 1
        if rec.fate not in known:
            bad.append(Violation("ledger", rec.created_at_ms, rec.src, f"unknown fate {rec.fate!r}"))
            continue
        closed[rec.flow] += 1
        if rec.fate is not None and rec.done_at_ms is not None and rec.done_at_ms < rec.created_at_ms:
            bad.append(Violation("ledger", rec.done_at_ms, rec.src, f"seq {rec.seq} finished before creation"))
    for f, n in sorted(per_flow.items()):
        if closed[f] != n:
            bad.append(Violation("ledger", 0.0, result.flows[f].src, f"flow {f}: {n} sent, {closed[f]} accounted"))
    report = result.report
    total = report.delivered + sum(report.drops.values()) + report.in_flight
    if total != report.sent:
        bad.append(Violation("ledger", 0.0, -1, f"sent {report.sent} != accounted {total}"))
    return bad


def audit_energy(result) -> list[Violation]:
    """Drained energy equals bits times per-bit cost for nodes that never hit zero."""
    cfg = result.config
    bad = []
    for i, (tx, rx, drained, residual) in enumerate(zip(result.tx_bits, result.rx_bits, result.drained_j, result.residual_j)):
        if residual <= 0:
            continue
        expect = tx * cfg.tx_cost_j_per_bit + rx * cfg.rx_cost_j_per_bit
        if abs(expect - drained) > 1e-9 * max(1.0, expect):
            bad.append(Violation("energy", cfg.sim_end_ms, i, f"drained {drained} J, bits say {expect} J"))
        if abs(cfg.initial_energy_j - residual - drained) > 1e-9 * cfg.initial_energy_j:
            bad.append(Violation("energy", cfg.sim_end_ms, i, "residual + drained != initial"))
    return bad


def downstream_edges(nodes, dst: int, links: Optional[set] = None) -> list[tuple[int, int]]:
    """Directed edges ``i -> j`` where node ``i`` believes ``j`` is lower for ``dst``.

    With ``links`` given, only currently linked pairs count.
    """
    edges = []
    for node in nodes:
        ds = node.dests.get(dst)
        if ds is None or ds.height is None:
            continue
        for j, h in ds.neighbor_heights.items():
            if h is None or not h < ds.height:
                continue
            if links is not None and (min(node.id, j), max(node.id, j)) not in links:
                continue
            edges.append((node.id, j))
    return sorted(edges)


def find_cycle(edges: Iterable[tuple[int, int]]) -> Optional[list[int]]:
    ts = TopologicalSorter()
    for a, b in edges:
        ts.add(b, a)
    try:
        ts.prepare()
    except CycleError as exc:
        return list(exc.args[1])
    return None


def audit_dags(nodes, links: Optional[set] = None, at_ms: float = 0.0) -> list[Violation]:
    dsts = sorted({d for n in nodes for d in n.dests})
    bad = []
    for dst in dsts:
        cycle = find_cycle(downstream_edges(nodes, dst, links))
        if cycle:
            bad.append(Violation("dag", at_ms, cycle[0], f"loop toward {dst}: {cycle}"))
    return bad
