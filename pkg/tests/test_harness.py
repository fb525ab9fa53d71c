import csv
import io
from pathlib import Path

import pytest

from tdmh.core import NetworkConfig
from tdmh.harness.cli import (EXIT_CAPACITY, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_OK, EXIT_PARSE, main,
                              metrics_csv)
from tdmh.harness.comparison import (MonteCarloSpec, WcpsBaseline, pairs_at_distance, tdmh_admission_mc,
                                     wcps_admission)
from tdmh.harness.networks import hex_disc, hex_grid, hex_nodes, preset
from tdmh.harness.replays import diamond_scenario, node_failure_scenario
from tdmh.harness.scenario_file import ScenarioParseError, format_scenario, parse_scenario
from tdmh.harness.studies import formation_config, power_sweep
from tdmh.simulator import run

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SMALL = """\
[config]
max_nodes = 8
seed = 3
duration = 20000
[nodes]
0 1 2
[links]
0 1 -60
1 2 -60 0.05
[streams]
2 0 1 1 2 0
"""


def test_wcps_admission():
    assert wcps_admission(WcpsBaseline(6)) == 4
    assert wcps_admission(WcpsBaseline(1)) == 25
    assert wcps_admission(WcpsBaseline(25)) == 1
    assert wcps_admission(WcpsBaseline(26)) == 0
    assert wcps_admission(WcpsBaseline(6, oversize=1)) == 3
    with pytest.raises(ValueError):
        WcpsBaseline(0)


def test_hex_presets():
    net = preset("comparison37")
    assert len(net.nodes) == 37 and net.diameter() == 6
    assert hex_disc(1).diameter() == 2 and len(hex_disc(1).nodes) == 7
    assert len(hex_grid(3, 4).nodes) == 12
    for n, diameter in ((16, 4), (32, 6), (64, 9), (128, 13)):
        net = hex_nodes(n)
        assert len(net.nodes) == n and net.diameter() == diameter
    with pytest.raises(ValueError):
        preset("square9")


def test_rssi_spread_is_seeded():
    a, b = hex_nodes(32, spread=10, seed=1), hex_nodes(32, spread=10, seed=1)
    assert a == b
    assert a != hex_nodes(32, spread=10, seed=2)
    assert all(-70 <= l.rssi <= -60 for l in a.links)


def test_pairs_at_distance():
    net = hex_disc(1)
    assert len(pairs_at_distance(net, 1)) == 2 * len(net.links)
    assert pairs_at_distance(net, 3) == []


def test_admission_monte_carlo_is_seeded():
    spec = MonteCarloSpec(hops=2, trials=5)
    assert tdmh_admission_mc(spec) == tdmh_admission_mc(spec)
    with pytest.raises(ValueError):
        MonteCarloSpec(hops=0)


def test_scenario_roundtrip():
    sc = parse_scenario(SMALL)
    assert sc.nodes == (0, 1, 2) and sc.seed == 3 and sc.links[1].per == 0.05
    again = parse_scenario(format_scenario(sc))
    assert again == sc
    for name in ("node_failure.txt", "diamond.txt"):
        text = (SCENARIOS / name).read_text()
        assert format_scenario(parse_scenario(text)) == text
    assert parse_scenario((SCENARIOS / "node_failure.txt").read_text()) == node_failure_scenario()
    assert parse_scenario((SCENARIOS / "diamond.txt").read_text()).links == diamond_scenario(1).links


@pytest.mark.parametrize("text, line", [
    ("[config]\nmax_nodes = 8\nbogus = 1\n", 3),
    ("0 1\n", 1),
    ("[nodes]\n0\n[links]\n0 x -60\n", 4),
    ("[streams]\n1 0 1 3 1 0\n", 2),
    ("[events]\n10 explode 1\n", 2),
    ("[weather]\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ScenarioParseError) as exc:
        parse_scenario(text, "bad.txt")
    assert exc.value.line == line
    assert str(exc.value).startswith(f"bad.txt:{line}:")


def test_metrics_csv_parses_back():
    m, _ = run(parse_scenario(SMALL))
    rows = list(csv.DictReader(io.StringIO(metrics_csv(m))))
    streams = [r for r in rows if r["row"] == "stream"]
    summary = rows[-1]
    assert len(streams) == len(m.streams)
    assert int(summary["sent"]) == sum(s.sent for s in m.streams.values())
    assert int(summary["schedules"]) == m.schedules


def test_power_sweep_grows_with_utilization():
    points = power_sweep()
    by_c = {}
    for p in points:
        by_c.setdefault(p.connectivity, []).append(p.current_ma)
    for currents in by_c.values():
        assert currents == sorted(currents)


def _write(tmp_path, text=SMALL):
    p = tmp_path / "sc.txt"
    p.write_text(text)
    return str(p)


def test_cli_simulate_is_deterministic(tmp_path):
    sc = _write(tmp_path)
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("metrics.csv", "nodes.csv", "events.log"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["simulate", "--scenario", sc, "--seed", "4", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert (tmp_path / "c" / "events.log").read_bytes() != (tmp_path / "a" / "events.log").read_bytes()


def test_cli_schedule_then_validate(tmp_path, capsys):
    sc = _write(tmp_path)
    out = tmp_path / "sched"
    assert main(["schedule", "--scenario", sc, "--out", str(out)]) == EXIT_OK
    assert main(["validate", "--scenario", sc, str(out / "schedule.bin")]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("valid")
    # the same schedule is invalid once the relay link is gone
    broken = _write(tmp_path, SMALL.replace("1 2 -60 0.05", "1 2 -90 0.05"))
    assert main(["validate", "--scenario", broken, str(out / "schedule.bin")]) == EXIT_INVALID


def test_cli_schedule_capacity_exit(tmp_path):
    streams = "".join(f"1 0 {p} 1 1 0\n" for p in range(14))
    sc = _write(tmp_path, SMALL.split("[streams]")[0] + "[streams]\n" + streams)
    assert main(["schedule", "--scenario", sc, "--out", str(tmp_path / "s")]) == EXIT_CAPACITY
    assert "rejected" in (tmp_path / "s" / "schedule.txt").read_text()


def test_cli_exit_codes(tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "missing.txt")]) == EXIT_PARSE
    assert main(["simulate", "--scenario", _write(tmp_path, "[config]\nnope = 1\n")]) == EXIT_PARSE
    bad = _write(tmp_path, SMALL.replace("max_nodes = 8", "max_nodes = 8\ntile_duration = 0"))
    assert main(["simulate", "--scenario", bad]) == EXIT_PARSE
    garbage = tmp_path / "junk.bin"
    garbage.write_bytes(b"\x01\x02")
    assert main(["validate", "--scenario", _write(tmp_path), str(garbage)]) == EXIT_PARSE
    isolated = _write(tmp_path, SMALL.replace("0 1 2", "0 1 2 3").replace("duration = 20000", "duration = 5000"))
    assert main(["simulate", "--scenario", isolated, "--out", str(tmp_path / "iso")]) == EXIT_NO_CONVERGENCE


def test_cli_power_and_compare(tmp_path):
    assert main(["power", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "power.csv").open()))
    assert len(rows) == 20
    assert main(["compare", "--trials", "3", "--preset", "hex3x3", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "compare.csv").open()))
    assert [int(r["hops"]) for r in rows] == list(range(1, len(rows) + 1))


def test_multi_frame_formation_config():
    four = formation_config(128, 128, 4)
    assert four.control_share() == pytest.approx(0.34)
    assert four.topology_timeout_rounds == 22
    assert formation_config(16, 16, 1) == NetworkConfig(max_nodes=16)
