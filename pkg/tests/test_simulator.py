import pytest

from tdmh.core import NetworkConfig
from tdmh.harness.studies import synthetic_schedule
from tdmh.scheduler import StreamParams, StreamState
from tdmh.simulator import (LinkSpec, NonConvergence, PowerModel, Scenario, ScenarioEvent, Simulation,
                            StreamRequest, TopologyActivity, estimate_power, measure_formation, run)


def pair(**kw):
    return Scenario(NetworkConfig(max_nodes=4), (0, 1), (LinkSpec(0, 1, -60),), **kw)


def line(n=4, per=0.0, **kw):
    links = tuple(LinkSpec(i, i + 1, -60, per) for i in range(n - 1))
    return Scenario(NetworkConfig(max_nodes=8), tuple(range(n)), links, **kw)


def test_two_node_stream_is_fully_reliable():
    sc = pair(streams=(StreamRequest(1, 0, 1, StreamParams(1)),), duration_ms=20_000)
    m, _ = run(sc)
    (sm,) = m.streams.values()
    assert sm.sent > 50 and sm.reliability == 1.0
    assert sm.worst_latency == 1
    assert m.collisions == 0


def test_multi_hop_loss_free_delivers_everything():
    req = StreamRequest(3, 0, 1, StreamParams(2, redundancy=2))
    m, _ = run(line(streams=(req,), duration_ms=30_000))
    sm = next(iter(m.streams.values()))
    assert sm.sent > 0 and sm.delivered == sm.sent
    assert 3 <= sm.worst_latency <= 26


def test_session_api():
    sim = Simulation(pair(duration_ms=60_000))
    sim.listen(0, 7)
    assert sim.run_until(lambda s: s.metrics.full_graph_at is not None)
    ep = sim.connect(1, 0, 7, StreamParams(1))
    assert sim.run_until(lambda s: ep.state is StreamState.ESTABLISHED)
    server = None
    while server is None:
        sim.step()
        got = sim.accept(0, 7)
        server = got[0] if got else None
    while not ep.write("hello"):
        sim.step()
    assert not ep.write("again")
    sim.run_until(lambda s: bool(server.inbox))
    assert server.read() == ["hello"]


def test_connect_without_listener_is_rejected():
    sim = Simulation(pair(duration_ms=60_000))
    assert sim.run_until(lambda s: s.metrics.full_graph_at is not None)
    ep = sim.connect(1, 0, 9, StreamParams(1))
    assert sim.run_until(lambda s: ep.state is StreamState.REJECTED)
    assert not ep.write("x")


def test_unused_link_change_keeps_schedule():
    links = (LinkSpec(0, 1, -60), LinkSpec(0, 2, -60), LinkSpec(1, 2, -60), LinkSpec(2, 3, -60))
    req = StreamRequest(1, 0, 1, StreamParams(1))
    base = Scenario(NetworkConfig(max_nodes=8), (0, 1, 2, 3), links, (), (req,), duration_ms=40_000)
    m0, _ = run(base)
    changed = Scenario(base.config, base.nodes, links, (ScenarioEvent(20_000, "link_down", (2, 3)),),
                       (req,), duration_ms=40_000)
    m1, _ = run(changed)
    assert m1.schedules == m0.schedules
    assert next(iter(m1.streams.values())).reliability == 1.0


def test_runs_are_deterministic():
    sc = line(per=0.1, streams=(StreamRequest(3, 0, 1, StreamParams(1, redundancy=2)),), duration_ms=20_000)
    _, a = run(sc)
    _, b = run(sc)
    assert a.text() == b.text()
    _, c = run(line(per=0.1, streams=sc.streams, duration_ms=20_000, seed=1))
    assert c.text() != a.text()


def test_formation_on_small_line():
    t = measure_formation(line(6, duration_ms=120_000))
    assert 0 < t < 60


def test_formation_needs_loss_free_links():
    with pytest.raises(ValueError):
        measure_formation(line(per=0.1))


def test_formation_times_out():
    # node 3 hears nobody strongly, so the master never sees all links
    sc = Scenario(NetworkConfig(max_nodes=8), (0, 1, 2, 3), (LinkSpec(0, 1, -60), LinkSpec(1, 2, -60)),
                  duration_ms=10_000)
    with pytest.raises(NonConvergence):
        measure_formation(sc)


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        Simulation(Scenario(nodes=(1, 2)))
    with pytest.raises(ValueError):
        Simulation(line(per=1.5))
    with pytest.raises(ValueError):
        Simulation(pair(events=(ScenarioEvent(1.0, "node_down", (0,)),)))


def test_all_sleep_power_is_sleep_current():
    cfg = NetworkConfig()
    model = PowerModel()
    idle = TopologyActivity(0.0, 0.0, 0.0)
    assert estimate_power(synthetic_schedule(cfg, 0), idle, model, cfg) == pytest.approx(model.sleep)


def test_doubling_active_slots_doubles_data_current():
    cfg = NetworkConfig()
    model = PowerModel()
    act = TopologyActivity()
    base = estimate_power(synthetic_schedule(cfg, 0), act, model, cfg)
    one = estimate_power(synthetic_schedule(cfg, 5), act, model, cfg) - base
    two = estimate_power(synthetic_schedule(cfg, 10), act, model, cfg) - base
    assert two == pytest.approx(2 * one)


def test_power_model_rejects_nonsense():
    with pytest.raises(ValueError):
        PowerModel(sleep=-1)
    with pytest.raises(ValueError):
        PowerModel(sleep=100)


def test_node_currents_reported():
    m, _ = run(pair(streams=(StreamRequest(1, 0, 1, StreamParams(1)),), duration_ms=10_000))
    model = PowerModel()
    assert set(m.node_current) == {0, 1}
    assert all(model.sleep < c < model.transmit for c in m.node_current.values())
