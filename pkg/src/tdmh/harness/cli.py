"""Command-line front end: ``tdmh simulate|schedule|formation|power|compare|validate``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import defaultdict
from pathlib import Path

from ..core import ConfigError
from ..scheduler import CAPACITY, CompactSchedule, Stream, StreamId, find_violations, schedule_streams
from ..simulator import Metrics, Simulation, SimulationError
from .comparison import compare
from .networks import preset
from .scenario_file import ScenarioParseError, load_scenario
from .studies import DEFAULT_FORMATION_GRID, formation_sweep, power_sweep

log = logging.getLogger("tdmh")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_NO_CONVERGENCE = 4
EXIT_CAPACITY = 5

METRIC_COLUMNS = ("row", "stream", "sent", "delivered", "reliability", "worst_latency_slots",
                  "established_s", "schedules", "formation_s", "collisions", "mean_current_ma")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def metrics_csv(m: Metrics) -> str:
    rows = []
    for sid in sorted(m.streams):
        s = m.streams[sid]
        rows.append(("stream", str(sid), s.sent, s.delivered, s.reliability, s.worst_latency,
                     s.established_at, None, None, None, None))
    currents = list(m.node_current.values())
    mean = sum(currents) / len(currents) if currents else None
    rows.append(("summary", None, sum(s.sent for s in m.streams.values()),
                 sum(s.delivered for s in m.streams.values()), None, None, None,
                 m.schedules, m.formation_time, m.collisions, mean))
    return _csv(METRIC_COLUMNS, rows)


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _out(args) -> Path | None:
    return Path(args.out) if args.out else None


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
    metrics, events = Simulation(sc).run()
    out = _out(args)
    _emit(metrics_csv(metrics), out, "metrics.csv")
    nodes = _csv(("node", "mean_current_ma"), sorted(metrics.node_current.items()))
    if out is not None:
        _emit(nodes, out, "nodes.csv")
        _emit(events.text(), out, "events.log")
    elif not args.csv:
        sys.stdout.write(nodes)
    if metrics.formation_time is None:
        log.error("master never obtained the full network graph")
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def schedule_table(compact: CompactSchedule) -> str:
    """One line per busy data slot, listing its transmissions."""
    busy = defaultdict(list)
    for e in compact.elements:
        for slot in range(e.offset, compact.superframe_slots, e.period):
            busy[slot].append(e)
    lines = [f"schedule {compact.schedule_id}: {compact.superframe_tiles} tiles, "
             f"{compact.superframe_slots} data slots, {len(compact.elements)} elements"]
    for slot in sorted(busy):
        cells = [f"{e.tx}->{e.rx} [{e.stream}{' rev' if e.reverse else ''} c{e.copy}]"
                 for e in sorted(busy[slot], key=lambda e: (e.tx, e.rx))]
        lines.append(f"{slot:5d}  " + " | ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_schedule(args) -> int:
    sc = load_scenario(args.scenario)
    graph = sc.truth()
    streams = [Stream(StreamId(r.src, r.dst, r.port), r.params) for r in sc.streams]
    result = schedule_streams(streams, graph, sc.config)
    text = schedule_table(result.schedule)
    for rej in result.rejected:
        text += f"rejected {rej.stream.id}: {rej.reason}\n"
    out = _out(args)
    if out is not None:
        _emit(text, out, "schedule.txt")
        out.joinpath("schedule.bin").write_bytes(result.schedule.to_bytes())
    else:
        sys.stdout.write(text)
        sys.stdout.write(result.schedule.to_bytes().hex() + "\n")
    if any(r.reason == CAPACITY for r in result.rejected):
        return EXIT_CAPACITY
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    data = Path(args.schedule).read_bytes()
    try:
        compact = CompactSchedule.from_bytes(data, sc.config)
    except ValueError as exc:
        log.error("cannot decode %s: %s", args.schedule, exc)
        return EXIT_PARSE
    problems = find_violations(compact, sc.truth())
    for p in problems:
        print(p)
    print("valid" if not problems else f"invalid: {len(problems)} problem(s)")
    return EXIT_INVALID if problems else EXIT_OK


def cmd_formation(args) -> int:
    grid = DEFAULT_FORMATION_GRID
    if args.nodes:
        grid = tuple((n, n, f) for n in args.nodes for f in args.frames)
    points = formation_sweep(grid, seed=args.seed or 0)
    rows = [(p.max_nodes, p.nodes, p.uplink_frames, p.timeout_rounds, p.formation_time) for p in points]
    _emit(_csv(("max_nodes", "nodes", "uplink_frames", "timeout_rounds", "formation_s"), rows),
          _out(args), "formation.csv")
    return EXIT_NO_CONVERGENCE if any(p.formation_time is None for p in points) else EXIT_OK


def cmd_power(args) -> int:
    rows = [(p.utilization, p.connectivity, p.current_ma) for p in power_sweep()]
    _emit(_csv(("utilization", "connectivity", "current_ma"), rows), _out(args), "power.csv")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = compare(args.preset, args.trials, args.seed or 0)
    _emit(_csv(("hops", "wcps", "tdmh_min", "tdmh_median", "tdmh_max"),
               [(r.hops, r.wcps, r.tdmh_min, r.tdmh_median, r.tdmh_max) for r in rows]),
          _out(args), "compare.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdmh", description="TDMH mesh network simulator and studies")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="directory for output files (default: stdout)")
        p.add_argument("--csv", action="store_true", help="print only CSV on stdout")
        if scenario:
            p.add_argument("--scenario", required=True)
        return p

    common(sub.add_parser("simulate", help="run a scenario"), True).set_defaults(func=cmd_simulate)
    common(sub.add_parser("schedule", help="schedule a scenario's streams on its topology"),
           True).set_defaults(func=cmd_schedule)
    p = common(sub.add_parser("validate", help="check a compact schedule against a scenario topology"), True)
    p.add_argument("schedule", help="binary compact schedule (as written by 'schedule --out')")
    p.set_defaults(func=cmd_validate)
    p = common(sub.add_parser("formation", help="network formation time sweep"))
    p.add_argument("--nodes", type=int, nargs="*", help="network sizes (max_nodes = nodes)")
    p.add_argument("--frames", type=int, nargs="*", default=[1, 4], help="uplink frames per tile")
    p.set_defaults(func=cmd_formation)
    common(sub.add_parser("power", help="average current sweep")).set_defaults(func=cmd_power)
    p = common(sub.add_parser("compare", help="admission comparison with the flooding baseline"))
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--preset", default="comparison37")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "preset", None):
            preset(args.preset)
        return args.func(args)
    except (ScenarioParseError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except (ValueError, SimulationError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
