import random

import pytest
from hypothesis import given, settings, strategies as st

from lpwasim import mac
from lpwasim.engine import Simulation
from lpwasim.scenario import HybParams, ProtocolKind, ScenarioConfig

from oracles import max_window_airtime


# duty cycle

def test_duty_earliest_blocks_until_oldest_airtime_expires():
    d = mac.DutyCycleTracker(0.01, 3600.0)
    d.debit(0.0, 36.0)
    assert not d.admits(100.0, 0.48)
    t = d.earliest(100.0, 0.48)
    # the window [t + 0.48 - 3600, t + 0.48] may hold 35.52 s of the old burst
    assert t == pytest.approx(3600.0 + 0.48 - 0.48, abs=1e-9)
    assert d.admits(t, 0.48)


def test_duty_earliest_is_now_when_budget_left():
    d = mac.DutyCycleTracker(0.01, 3600.0)
    d.debit(0.0, 10.0)
    assert d.earliest(20.0, 0.48) == 20.0


def test_duty_rejects_airtime_above_budget():
    d = mac.DutyCycleTracker(0.0001, 3600.0)
    with pytest.raises(ValueError):
        d.earliest(0.0, 0.48)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 500.0), st.sampled_from([0.48, 0.24, 0.048, 2.4])),
                min_size=1, max_size=80))
def test_duty_earliest_is_tight(requests):
    """Greedy use of ``earliest`` never breaks the cap and never waits needlessly."""
    window, limit = 100.0, 0.05
    d = mac.DutyCycleTracker(limit, window)
    t = 0.0
    done = []
    for gap, air in requests:
        t += gap
        s = d.earliest(t, air)
        assert s >= t
        if s > t:
            assert not d.admits(s - 1e-6, air) or s - t < 1e-6
        d.debit(s, air)
        done.append((s, s + air))
        t = s + air
    assert max_window_airtime(done, window) <= limit * window + 1e-9


def test_duty_invariant_in_simulation():
    cfg = ScenarioConfig(lambda_t=0.05, duty_window=600.0, sim_duration=1800.0, warmup=0.0,
                         lambda_s=2e-4)
    sim = Simulation(cfg, 3, keep_log=True)
    sim.run()
    per_node = {}
    for uid, s, e, kind in sim.tx_log:
        per_node.setdefault(uid, []).append((s, e))
    worst = max(max_window_airtime(iv, cfg.duty_window) for iv in per_node.values())
    assert worst <= cfg.duty_cycle * cfg.duty_window + 1e-9
    deferrals = sum(n.duty_deferrals for n in sim.nodes)
    assert deferrals > 0  # the load is chosen to hit the cap


# LBT

def test_backoff_delay_range():
    p = mac.LbtParams.from_config(ScenarioConfig())
    assert mac.backoff_delay(p, 3, 0.0) == 0.0
    assert mac.backoff_delay(p, 3, 0.999999) == pytest.approx(7 * 320e-6)
    rng = random.Random(1)
    for _ in range(200):
        slots = mac.backoff_delay(p, 5, rng.random()) / 320e-6
        assert 0 <= round(slots) <= 31


def test_lbt_state_after_busy():
    p = mac.LbtParams.from_config(ScenarioConfig())
    nb, be = 0, p.min_be
    seen = []
    for _ in range(5):
        nb, be, abandon = mac.lbt_after_busy(p, nb, be)
        seen.append((nb, be, abandon))
    assert seen == [(1, 4, False), (2, 5, False), (3, 5, False), (4, 5, False), (5, 5, True)]


def test_etsi_parameters():
    cfg = ScenarioConfig()
    p = mac.LbtParams.from_config(cfg, etsi=True)
    assert (p.t_sense, p.e_sense) == (5e-3, 0.2e-3)


def test_ed_threshold_default_and_override():
    cfg = ScenarioConfig()
    assert mac.ed_threshold(cfg) == pytest.approx(6.934e-18, rel=1e-3)
    assert mac.ed_threshold(ScenarioConfig(ed_threshold=1e-15)) == 1e-15
    assert mac.ed_threshold(ScenarioConfig(rates=(1000.0,))) > mac.ed_threshold(cfg)


def two_node_sim(protocol_b, **kw):
    """Node A (ALOHA, fixed) next to node B; B senses A's signal."""
    cfg = ScenarioConfig(lambda_s=0.0, lambda_t=0.0, sim_duration=100.0, warmup=0.0,
                         fading=False, protocol_mix=(("ALOHA", 0.0), (protocol_b, 0.0)), **kw)
    from lpwasim.scenario import Node
    a = Node(uid=1, pop=0, kind=ProtocolKind.ALOHA, x=10.0, y=0.0)
    b = Node(uid=(1 << 24) | 1, pop=1, kind=ProtocolKind(protocol_b), x=20.0, y=0.0)
    sim = Simulation(cfg, 1, nodes=[a, b], trace=True)
    return sim, a, b


def test_persistent_interferer_aborts_after_five_ccas():
    sim, a, b = two_node_sim("LBT")
    a.arrivals = [1.0]
    b.arrivals = [1.01]  # A (0.48 s) is on the air throughout B's backoffs
    sim.schedule(1.0, mac.ARRIVAL, a, None)
    sim.schedule(1.01, mac.ARRIVAL, b, None)
    sim.run()
    assert b.cca_aborts == 1 and b.attempts == 1
    assert b.energy.cca == pytest.approx(5 * 3.98e-6)
    assert b.energy.tx == 0.0
    outcomes = [o for _, k, u, o in sim.trace_lines if k == "cca" and u == b.uid]
    assert outcomes == ["busy"] * 4 + ["abort"]


def test_idle_channel_transmits_after_one_cca():
    sim, a, b = two_node_sim("LBT")
    b.arrivals = [1.0]
    sim.schedule(1.0, mac.ARRIVAL, b, None)
    sim.run()
    assert b.successes == 1
    assert b.energy.cca == pytest.approx(3.98e-6)
    assert b.energy.tx == pytest.approx((sim.config.p_circuit + sim.config.p_tx) * 0.48)


# HYB

def test_frame_layout():
    phases = mac.hyb_frame_tick(HybParams(), 2)
    assert phases[0].start == 120.0 and phases[0].end == pytest.approx(120.12)
    res = [p for p in phases if p.name == "reservation"]
    assert len(res) == 80
    assert res[0].end - res[0].start == pytest.approx(0.048)
    data = phases[-1]
    assert data.end - data.start == pytest.approx(52.2)
    assert phases[-2].start == pytest.approx(120.0 + 0.12 + 3.84)


def test_slot_choice_uniform():
    counts = [0] * 80
    for uid in range(8000):
        counts[mac.hyb_pick_slot(1, uid, 0, 80)] += 1
    assert min(counts) > 60 and max(counts) < 145


def test_allocation_packs_in_slot_order_and_rejects_overflow():
    reqs = [(5, 1, 20.0, "a"), (2, 9, 20.0, "b"), (7, 3, 20.0, "c"), (9, 4, 1.0, "d")]
    grants, rejected = mac.hyb_allocate(100.0, 52.2, reqs)
    assert [(g[0], g[1]) for g in grants] == [("b", 100.0), ("a", 120.0)]
    assert rejected == ["c", "d"]


def test_allocation_all_fit():
    grants, rejected = mac.hyb_allocate(0.0, 52.2, [(0, 1, 0.0024, "x")] * 3)
    assert rejected == [] and len(grants) == 3


def test_hyb_schedule_has_no_overlap_in_data_window():
    cfg = ScenarioConfig(protocol="HYB", rate_mode="RA", lambda_s=2e-4, sim_duration=600.0,
                         warmup=0.0)
    sim = Simulation(cfg, 2, keep_log=True)
    sim.run()
    data = sorted((s, e) for uid, s, e, k in sim.tx_log if k == mac.DATA)
    assert data
    assert all(b[0] >= a[1] - 1e-9 for a, b in zip(data, data[1:]))
    h = cfg.hyb
    for s, e in data:
        k = int(s // h.frame)
        assert s >= k * h.frame + h.data_start - 1e-9
        assert e <= (k + 1) * h.frame + 1e-9
    res = [(s, e) for uid, s, e, k in sim.tx_log if k == mac.RESERVATION]
    for s, e in res:
        off = (s % h.frame) - h.beacon
        assert off / h.slot_duration == pytest.approx(round(off / h.slot_duration), abs=1e-6)


def test_hyb_energy_accounting():
    cfg = ScenarioConfig(protocol="HYB", rate_mode="RA", lambda_s=1e-4, sim_duration=600.0,
                         warmup=0.0)
    sim = Simulation(cfg, 5, keep_log=True)
    sim.run()
    frames = sum(1 for k in range(sim.frames) if k * cfg.hyb.frame < cfg.sim_duration)
    for node in sim.nodes:
        beacons = frames * cfg.p_rx * cfg.hyb.beacon
        notif = node.energy.rx - beacons
        n_res = sum(1 for uid, s, e, k in sim.tx_log if uid == node.uid and k == mac.RESERVATION)
        assert notif == pytest.approx(n_res * cfg.p_rx * cfg.hyb.notification, abs=1e-12)


def test_duty_constraint_assignment():
    cfg = ScenarioConfig()
    assert mac.duty_constrained(ProtocolKind.ALOHA, cfg)
    assert mac.duty_constrained(ProtocolKind.HYB, cfg)
    assert not mac.duty_constrained(ProtocolKind.LBT, cfg)
    assert mac.duty_constrained(ProtocolKind.LBT, ScenarioConfig(lbt_duty_limited=True))
