import io

import pytest
from hypothesis import given, strategies as st

from pdtora.config import FlowSpec, ScenarioConfig
from pdtora.metrics import (
    SUMMARY_COLUMNS, DeathTimeline, average_e2e_delay, packet_delivery_ratio, read_trace, record_death,
    write_summary, write_timeline, write_trace,
)
from pdtora.simkernel import run


@pytest.mark.parametrize("sent, got, expected", [(100, 97, 0.97), (100, 100, 1.0), (0, 0, 0.0)])
def test_pdr(sent, got, expected):
    assert packet_delivery_ratio(sent, got) == expected


def test_pdr_contract():
    with pytest.raises(ValueError):
        packet_delivery_ratio(3, 4)


def test_average_delay():
    assert average_e2e_delay([(0, 10), (0, 30)]) == 20
    assert average_e2e_delay([(5, 5)]) == 0
    assert average_e2e_delay([]) is None
    with pytest.raises(ValueError):
        average_e2e_delay([(5, 4)])


def test_death_timeline():
    tl = record_death(DeathTimeline(), 3, 65_000.0)
    assert tl.first_death_ms == 65_000.0
    record_death(tl, 4, 70_000.0)
    record_death(tl, 9, 70_000.0)
    assert [c for _, c in tl.points] == [1, 2, 3]
    with pytest.raises(ValueError):
        record_death(tl, 3, 80_000.0)
    empty = DeathTimeline()
    assert empty.points == [] and empty.first_death_ms is None


@given(st.lists(st.floats(0, 1e5), max_size=30))
def test_timeline_is_monotone(times):
    tl = DeathTimeline()
    for node, t in enumerate(sorted(times)):
        record_death(tl, node, t)
    counts = [c for _, c in tl.points]
    assert counts == list(range(1, len(times) + 1))


def test_zero_traffic_report():
    cfg = ScenarioConfig(num_nodes=3, num_flows=0, max_speed_m_s=0.0, sim_end_ms=500.0)
    rep = run(cfg).report
    assert rep.sent == 0 and rep.pdr == 0.0 and rep.avg_e2e_delay_ms is None
    assert rep.summary_row()["avg_delay_ms"] == ""


def test_single_hop_report():
    cfg = ScenarioConfig(num_nodes=2, positions=((0.0, 0.0), (50.0, 0.0)), flows=(FlowSpec(0, 1),),
                         max_speed_m_s=0.0, sim_end_ms=3000.0, flow_start_max_ms=0.0, packet_bits=2000)
    rep = run(cfg).report
    assert rep.pdr == 1.0 and rep.packet_loss_ratio == 0.0
    assert 1.0 <= rep.avg_e2e_delay_ms < 1.1
    assert rep.dead_at_end == 0 and rep.first_death_ms is None
    assert rep.per_flow[0].sent == rep.sent


def test_csv_writers_round_trip():
    row = {c: str(i) for i, c in enumerate(SUMMARY_COLUMNS)}
    buf = io.StringIO()
    write_summary(buf, [row])
    assert buf.getvalue().splitlines() == [",".join(SUMMARY_COLUMNS), ",".join(row[c] for c in SUMMARY_COLUMNS)]

    buf = io.StringIO()
    write_timeline(buf, [(1.5, 1), (2.0, 2)])
    assert buf.getvalue() == "time_ms,dead_count\n1.500000,1\n2.000000,2\n"

    buf = io.StringIO()
    write_trace(buf, [(0.25, 3, "forward", "QRY", 1, 7, "budget_in=250.0;budget_out=240.0")])
    rows = read_trace(buf.getvalue())
    assert rows == [{"time_ms": "0.250000", "node": "3", "event": "forward", "packet_kind": "QRY",
                     "src": "1", "dst": "7", "detail": "budget_in=250.0;budget_out=240.0"}]
