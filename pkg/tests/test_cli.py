import csv
import subprocess
import sys

import pytest

from pdtora.cli import main, mean_row, run_sweep
from pdtora.config import Protocol, ScenarioConfig, parse_scenario
from pdtora.simkernel import run

SMALL = "num_nodes = 12\nsim_end_ms = 4000\nnum_flows = 3\nsession_ms = 0\n"


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_three_files(scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", scenario, "--seed", "3", "--protocol", "tora", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["summary.csv", "timeline_tora_seed3.csv", "trace_tora_seed3.csv"]
    rows = _rows(out / "summary.csv")
    assert len(rows) == 1 and rows[0]["protocol"] == "tora" and rows[0]["seed"] == "3"
    expected = run(parse_scenario(SMALL, seed=3, protocol=Protocol.TORA)).report.summary_row()
    assert rows[0] == {k: str(v) for k, v in expected.items()}


def test_sweep_row_count_and_means(scenario, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", scenario, "--axis", "speed", "--values", "5,15", "--seeds", "2",
                 "--out", str(out), "--jobs", "1"]) == 0
    rows = _rows(out / "summary.csv")
    runs = [r for r in rows if r["seed"] != "mean"]
    means = [r for r in rows if r["seed"] == "mean"]
    assert len(runs) == 2 * 2 * 2 and len(means) == 2 * 2
    assert [(r["max_speed_m_s"], r["seed"], r["protocol"]) for r in runs[:4]] == [
        ("5.000000", "0", "tora"), ("5.000000", "0", "pdtora"), ("5.000000", "1", "tora"), ("5.000000", "1", "pdtora")]
    pd = [float(r["pdr"]) for r in runs if r["protocol"] == "pdtora" and r["max_speed_m_s"] == "5.000000"]
    mean_pd = next(r for r in means if r["protocol"] == "pdtora" and r["max_speed_m_s"] == "5.000000")
    assert float(mean_pd["pdr"]) == pytest.approx(sum(pd) / 2, abs=1e-6)
    assert len(list(out.glob("timeline_*.csv"))) == 8
    assert not list(out.glob("trace_*.csv"))


def test_sweep_is_byte_identical_and_parallel_safe(scenario, tmp_path):
    args = ["sweep", "--scenario", scenario, "--axis", "nodes", "--values", "6,9", "--seeds", "2", "--trace"]
    assert main(args + ["--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_degenerate_sweep_matches_plain_run():
    base = parse_scenario(SMALL)
    res = run_sweep(base, "speed", [12.0], [4])
    for cell in res.cells:
        plain = run(parse_scenario(SMALL, max_speed_m_s=12.0, seed=4, protocol=cell.protocol)).report.summary_row()
        assert cell.row == plain


def test_failed_cells_are_reported_and_rest_continues(scenario, tmp_path, capsys):
    out = tmp_path / "f"
    # one node cannot host random flows
    code = main(["sweep", "--scenario", scenario, "--axis", "nodes", "--values", "1,5", "--seeds", "1",
                 "--out", str(out), "--jobs", "1"])
    assert code == 1
    err = capsys.readouterr().err
    assert "nodes=1" in err and err.strip().splitlines()[-1].startswith("error:")
    rows = _rows(out / "summary.csv")
    assert {r["num_nodes"] for r in rows} == {"5"}


def test_bad_scenario_exits_nonzero_with_one_line(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("range_m = -1\n")
    proc = subprocess.run([sys.executable, "-m", "pdtora.cli", "run", "--scenario", str(p), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1 and "range_m" in lines[0]


def test_sweep_rejects_empty_values():
    with pytest.raises(ValueError):
        run_sweep(ScenarioConfig(), "speed", [], [0])
    with pytest.raises(SystemExit):
        main(["sweep", "--axis", "speed", "--values", "", "--out", "x"])


def test_mean_row_skips_empty_cells():
    rows = [{"protocol": "tora", "seed": 0, "num_nodes": 5, "max_speed_m_s": "1", "pause_s": "1", "pdr": "0.5",
             "avg_delay_ms": "", "loss_ratio": "0.5", "first_death_ms": "10.0", "dead_at_end": 1},
            {"protocol": "tora", "seed": 1, "num_nodes": 5, "max_speed_m_s": "1", "pause_s": "1", "pdr": "1.0",
             "avg_delay_ms": "", "loss_ratio": "0.0", "first_death_ms": "", "dead_at_end": 0}]
    m = mean_row(rows)
    assert m["seed"] == "mean" and m["pdr"] == "0.750000" and m["avg_delay_ms"] == ""
    assert m["first_death_ms"] == "10.000000" and m["dead_at_end"] == "0.500000"
