"""Command line: single runs and parameter sweeps, written out as CSV."""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import fmean
from typing import Any, Callable, Optional, Sequence

from pdtora import metrics
from pdtora.config import ConfigError, Protocol, ScenarioConfig, load_scenario
from pdtora.simkernel import TRACE_MODES, Simulator

AXES = {"speed": "max_speed_m_s", "nodes": "num_nodes", "num_nodes": "num_nodes"}


@dataclass
class CellResult:
    value: float
    seed: int
    protocol: Protocol
    name: str
    row: dict
    timeline: list
    trace: list
    wall_s: float = 0.0
    inspected: Any = None


@dataclass
class CellFailure:
    value: float
    seed: int
    protocol: Protocol
    reason: str


@dataclass
class SweepResult:
    axis: str
    cells: list[CellResult] = field(default_factory=list)
    failures: list[CellFailure] = field(default_factory=list)

    def rows(self) -> list[dict]:
        """Per-run rows in (value, seed, protocol) order, each value followed by its mean rows."""
        out = []
        by_value: dict = {}
        for c in self.cells:
            by_value.setdefault(c.value, []).append(c)
        for value in sorted(by_value):
            cells = by_value[value]
            out.extend(c.row for c in cells)
            for proto in Protocol:
                group = [c.row for c in cells if c.protocol is proto]
                if group:
                    out.append(mean_row(group))
        return out


def run_name(cfg: ScenarioConfig, axis: Optional[str] = None) -> str:
    base = f"{cfg.protocol.value}_seed{cfg.seed}"
    if axis is None:
        return base
    return f"{axis}{getattr(cfg, AXES[axis]):g}_{base}"


def _sort_key(protocol: Protocol) -> int:
    return list(Protocol).index(protocol)


def mean_row(rows: Sequence[dict]) -> dict:
    """Average the numeric summary columns; ``seed`` becomes ``mean``.

    A column empty in every row (no deliveries, no deaths) stays empty;
    otherwise only the non-empty values are averaged.
    """
    out = dict(rows[0])
    out["seed"] = "mean"
    for col in ("pdr", "avg_delay_ms", "loss_ratio", "first_death_ms", "dead_at_end"):
        vals = [float(r[col]) for r in rows if r[col] != ""]
        out[col] = f"{fmean(vals):.6f}" if vals else ""
    return out


def execute(cfg: ScenarioConfig, trace: str = "off", axis: Optional[str] = None, value: float = 0.0,
            inspect: Optional[Callable] = None) -> CellResult:
    """Run one cell. ``inspect(result)`` runs in the same process; its
    return value is kept and the trace is then dropped."""
    t0 = time.perf_counter()
    result = Simulator(cfg, trace).run()
    report = result.report
    cell = CellResult(value, cfg.seed, cfg.protocol, run_name(cfg, axis), report.summary_row(),
                      report.dead_node_timeline, result.trace, time.perf_counter() - t0)
    if inspect is not None:
        cell.inspected = inspect(result)
        cell.trace = []
    return cell


def _cell_args(axis: str, values, seeds):
    key = AXES[axis]
    for value in values:
        for seed in seeds:
            for proto in Protocol:
                overrides = {key: int(value) if key == "num_nodes" else float(value),
                             "seed": int(seed), "protocol": proto}
                yield value, seed, proto, overrides


def _run_cell(base, overrides, trace, axis, value, inspect):
    cfg = replace(base, **overrides).validate()
    return execute(cfg, trace, axis, value, inspect)


def run_sweep(base: ScenarioConfig, axis: str, values: Sequence[float], seeds: Sequence[int],
              trace: str = "off", jobs: int = 1, inspect: Optional[Callable] = None) -> SweepResult:
    """Run every (value, seed, protocol) cell. A cell whose configuration is
    invalid is reported in ``failures`` and the rest of the sweep goes on.

    ``inspect`` must be a picklable top-level function when ``jobs > 1``.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    if not values:
        raise ValueError("values must not be empty")
    if trace not in TRACE_MODES:
        raise ValueError(f"trace must be one of {TRACE_MODES}")
    out = SweepResult(axis)
    jobs_list = list(_cell_args(axis, values, seeds))
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        pending = []
        for value, seed, proto, overrides in jobs_list:
            args = (base, overrides, trace, axis, value, inspect)
            pending.append((value, seed, proto, pool.submit(_run_cell, *args) if pool else args))
        for value, seed, proto, job in pending:
            try:
                cell = job.result() if pool else _run_cell(*job)
            except (ConfigError, ValueError) as exc:
                out.failures.append(CellFailure(value, seed, proto, str(exc)))
                continue
            out.cells.append(cell)
    finally:
        if pool:
            pool.shutdown()
    out.cells.sort(key=lambda c: (c.value, c.seed, _sort_key(c.protocol)))
    return out


# file output


def write_run_files(out_dir: str, cells: Sequence[CellResult], rows: Sequence[dict], with_trace: bool) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        metrics.write_summary(fh, rows)
    for c in cells:
        with open(os.path.join(out_dir, f"timeline_{c.name}.csv"), "w", newline="", encoding="utf-8") as fh:
            metrics.write_timeline(fh, c.timeline)
        if with_trace:
            with open(os.path.join(out_dir, f"trace_{c.name}.csv"), "w", newline="", encoding="utf-8") as fh:
                metrics.write_trace(fh, c.trace)


def _parse_values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated number list: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("need at least one value")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdtora", description="TORA / PDTORA MANET simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one seeded run")
    r.add_argument("--scenario", help="scenario file (defaults apply when omitted)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--protocol", choices=[x.value for x in Protocol], default=Protocol.PDTORA.value)
    r.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="vary one axis over seeds and both protocols")
    s.add_argument("--scenario")
    s.add_argument("--axis", choices=["speed", "nodes"], required=True)
    s.add_argument("--values", type=_parse_values, required=True)
    s.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1")
    s.add_argument("--out", required=True)
    s.add_argument("--trace", action="store_true", help="also write per-run trace CSVs")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    return p


def _load(path: Optional[str]) -> ScenarioConfig:
    return load_scenario(path) if path else ScenarioConfig()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        base = _load(args.scenario)
        if args.command == "run":
            cfg = replace(base, seed=args.seed, protocol=Protocol(args.protocol)).validate()
            cell = execute(cfg, "full")
            write_run_files(args.out, [cell], [cell.row], with_trace=True)
            return 0
        if args.seeds < 1:
            raise ValueError("--seeds must be at least 1")
        result = run_sweep(base, args.axis, args.values, range(args.seeds),
                           trace="full" if args.trace else "off", jobs=max(1, args.jobs))
        write_run_files(args.out, result.cells, result.rows(), with_trace=args.trace)
        if result.failures:
            for f in result.failures:
                print(f"failed cell {args.axis}={f.value:g} seed={f.seed} {f.protocol.value}: {f.reason}",
                      file=sys.stderr)
            print(f"error: {len(result.failures)} sweep cell(s) failed", file=sys.stderr)
            return 1
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
