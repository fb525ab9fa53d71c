"""Acceptance criteria, one test each; a summary line per criterion is printed at the end of the run."""
import itertools
import math
import random
import time
from pathlib import Path

import numpy as np

from oracles import confirm_unschedulable, random_graph, random_streams
from tdmh.activation import should_reschedule
from tdmh.core import NetworkConfig, period_progression
from tdmh.harness.cli import main
from tdmh.harness.comparison import WcpsBaseline, compare, wcps_admission
from tdmh.harness.replays import FAILED_NODE, diamond_scenario, node_failure_scenario
from tdmh.harness.studies import formation_time, synthetic_schedule
from tdmh.scheduler import CAPACITY, StreamId, conflict_in_time, find_violations, schedule_streams, validate
from tdmh.simulator import PowerModel, Simulation, TopologyActivity, estimate_power, run


def test_1_conflict_predicate_matches_enumeration(criterion):
    start = time.perf_counter()
    mismatches = checked = 0
    for p in range(1, 201):
        a = np.arange(p)[:, None]
        for q in range(1, 201):
            # mark every (a, b) whose progressions share some slot of the hyperperiod
            t = np.arange(math.lcm(p, q))
            meet = np.zeros((p, q), bool)
            meet[t % p, t % q] = True
            predicted = conflict_in_time(a, p, np.arange(q)[None, :], q)
            mismatches += int(np.count_nonzero(meet != predicted))
            checked += p * q
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    criterion(1, ok, f"{checked} cases, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


def test_2_random_schedules_valid_and_rejections_confirmed(criterion):
    rng = random.Random(2024)
    cfg = NetworkConfig(max_nodes=20)
    invalid = unconfirmed = rejections = 0
    for _ in range(1000):
        n = rng.randint(2, 20)
        g = random_graph(rng, n, p_link=rng.uniform(0.1, 0.5))
        res = schedule_streams(random_streams(rng, n, rng.randint(1, 20)), g, cfg)
        invalid += bool(find_violations(res.schedule, g))
        for rej in res.rejected:
            if rej.reason == CAPACITY:
                rejections += 1
                unconfirmed += not confirm_unschedulable(rej, g)
    ok = invalid == 0 and unconfirmed == 0
    criterion(2, ok, f"1000 instances, {invalid} invalid, {rejections} capacity rejections, "
                     f"{unconfirmed} unconfirmed")
    assert ok


def test_3_hyperperiod_at_most_twice_longest_period(criterion):
    members = list(period_progression(1000))
    worst = 0.0
    for r in range(1, len(members) + 1):
        for subset in itertools.combinations(members, r):
            worst = max(worst, math.lcm(*subset) / max(subset))
    ok = worst <= 2
    criterion(3, ok, f"{2 ** len(members) - 1} subsets, worst lcm/max = {worst:g}")
    assert ok


def test_4_flooding_baseline_admission(criterion):
    base = WcpsBaseline(max_hops=6, slot_duration=2_000, deadline=50_000)
    counts = [wcps_admission(base, d) for d in range(1, 7)]
    ok = counts == [4] * 6
    criterion(4, ok, f"admitted per hop distance 1..6: {counts}")
    assert ok


def test_5_comparison_shape(criterion):
    start = time.perf_counter()
    rows = compare("comparison37", trials=200, seed=0)
    elapsed = time.perf_counter() - start
    medians = [r.tdmh_median for r in rows]
    d1 = rows[0]
    ok = (d1.tdmh_min > 50 and d1.tdmh_min >= 10 * d1.wcps
          and all(a >= b for a, b in zip(medians, medians[1:])) and elapsed <= 600)
    table = ", ".join(f"d={r.hops}:{r.tdmh_min}/{r.tdmh_median:g}/{r.tdmh_max}" for r in rows)
    criterion(5, ok, f"min/median/max {table}; wcps {d1.wcps}; {elapsed:.1f}s")
    assert ok


def test_6_formation_time(criterion):
    timed = {}
    slowest = 0.0
    for point in ((16, 16, 1), (32, 32, 1), (128, 128, 1), (128, 128, 4)):
        start = time.perf_counter()
        timed[point] = formation_time(*point).formation_time
        slowest = max(slowest, time.perf_counter() - start)
    small = [timed[16, 16, 1], timed[32, 32, 1]]
    one, four = timed[128, 128, 1], timed[128, 128, 4]
    ok = (None not in timed.values() and all(t < 100 for t in small)
          and one >= 3 * four and 60 <= four <= 240 and slowest <= 300)
    criterion(6, ok, f"16 nodes {small[0]:.1f}s, 32 nodes {small[1]:.1f}s, 128 nodes 1 frame {one:.1f}s "
                     f"vs 4 frames {four:.1f}s (ratio {one / four:.2f}); slowest point {slowest:.1f}s desk")
    assert ok


def test_7_node_failure_replay(criterion):
    sc = node_failure_scenario()
    sim = Simulation(sc)
    metrics, _ = sim.run()
    master = sim.master
    sid = StreamId(13, 0, 1)
    sm = metrics.streams[sid]
    removals = [(n, r) for _, n, r in master.removals]
    silent = [r - master.last_heard_round[n] for n, r in removals]
    timeout = sc.config.topology_timeout_rounds
    after = [h for h in master.history if h.computed_at * 1000 > 150_000]
    routes = {}
    if after:
        for e in sorted(after[0].schedule.elements, key=lambda e: e.offset):
            if e.stream == sid:
                routes.setdefault(e.copy, [13]).append(e.rx)
    paths = sorted(tuple(p) for p in routes.values())
    ok = (sm.sent > 0 and sm.delivered == sm.sent
          and [n for n, _ in removals] == [FAILED_NODE] and silent == [timeout]
          and paths == [(13, 6, 0), (13, 6, 0), (13, 12, 11, 9, 7, 0)])
    criterion(7, ok, f"stream 13->0 delivered {sm.delivered}/{sm.sent}; removed {removals} after "
                     f"{silent} silent rounds (timeout {timeout}); new routes {paths}")
    assert ok


def test_8_redundancy_ordering(criterion):
    means = []
    for r in (1, 2, 3):
        rel = []
        for seed in range(30):
            m, _ = run(diamond_scenario(r, seed=seed))
            rel.append(next(iter(m.streams.values())).reliability)
        means.append(sum(rel) / len(rel))
    r1, r2, r3 = means
    ok = r3 >= r2 >= r1 >= 0.95
    criterion(8, ok, f"mean reliability r1={r1:.4f} r2={r2:.4f} r3={r3:.5f} over 30 seeds, PER 2%")
    assert ok


def test_9_power_affine_in_active_slots(criterion):
    cfg = NetworkConfig()
    model = PowerModel()
    activity = TopologyActivity(1.0, 1 / cfg.max_nodes, 0.25)
    tiles = cfg.superframe_tiles * 10
    slots = cfg.slots_in_tiles(tiles)
    k = np.arange(slots + 1)
    current = np.array([estimate_power(synthetic_schedule(cfg, int(n), tiles), activity, model, cfg) for n in k])
    design = np.column_stack([k, np.ones_like(k)]).astype(float)
    coef, *_ = np.linalg.lstsq(design, current, rcond=None)
    residual = float(np.max(np.abs(design @ coef - current)))
    ok = residual <= 1e-9 * float(np.max(current))
    criterion(9, ok, f"{len(k)} points, slope {coef[0]:.6g} mA/slot, max residual {residual:.2e} mA")
    assert ok


def _random_delta(rng, g):
    h = g.copy()
    nodes = g.nodes()
    op = rng.randrange(5)
    strong = sorted(g.strong_links())
    if op == 0 and strong:
        h.remove_link(*rng.choice(strong))
    elif op == 1 and strong:
        u, v = rng.choice(strong)
        h.add_link(u, v, strong=False)
    elif op == 2 and len(nodes) > 2:
        h.remove_node(rng.choice(nodes[1:]))
    else:
        u, v = rng.sample(nodes, 2)
        h.add_link(u, v, strong=op == 4)
    return h


def test_10_activation_never_misses_invalidation(criterion):
    rng = random.Random(10)
    cfg = NetworkConfig(max_nodes=20)
    missed = spurious = still_valid = invalidating = 0
    deltas = 0
    while deltas < 10_000:
        n = rng.randint(4, 20)
        g = random_graph(rng, n, p_link=rng.uniform(0.15, 0.5))
        res = schedule_streams(random_streams(rng, n, rng.randint(1, 12)), g, cfg)
        if not res.schedule.elements:
            continue
        for _ in range(20):
            h = _random_delta(rng, g)
            triggered = bool(should_reschedule(res.activation, g.diff(h)))
            if validate(res.schedule, h):
                still_valid += 1
                spurious += triggered
            else:
                invalidating += 1
                missed += not triggered
            deltas += 1
    rate = spurious / still_valid
    ok = missed == 0 and rate <= 0.05
    criterion(10, ok, f"{deltas} deltas, {invalidating} invalidating, {missed} missed, "
                      f"spurious {spurious}/{still_valid} = {rate:.2%}")
    assert ok


def test_11_cli_is_deterministic(criterion, tmp_path, capsysbinary):
    scenario = str(Path(__file__).resolve().parent.parent / "scenarios" / "node_failure.txt")
    commands = [
        ["simulate", "--scenario", scenario, "--csv"],
        ["schedule", "--scenario", scenario],
        ["formation", "--nodes", "16", "--frames", "1", "4"],
        ["power"],
        ["compare", "--trials", "20"],
    ]
    differing = []
    for argv in commands:
        outputs = []
        for _ in range(2):
            code = main(argv)
            outputs.append((code, capsysbinary.readouterr().out))
        if outputs[0] != outputs[1] or not outputs[0][1]:
            differing.append(argv[0])
    outdirs = []
    for name in ("a", "b"):
        main(["simulate", "--scenario", scenario, "--out", str(tmp_path / name)])
        outdirs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()})
    if outdirs[0] != outdirs[1]:
        differing.append("simulate --out")
    ok = not differing
    criterion(11, ok, f"{len(commands) + 1} commands run twice, differing: {differing or 'none'}")
    assert ok
