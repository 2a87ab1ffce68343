import math

import numpy as np
import pytest
from scipy import stats

from lpwasim.channel import max_coverage_radius
from lpwasim.scenario import (ConfigError, HybParams, ProtocolKind, RateMode, ScenarioConfig,
                              dbm_to_w, keyed_arrivals, sample_arrivals, sample_deployment,
                              w_to_dbm)


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.lambda_s == 1e-3
    assert cfg.lambda_t == 0.01
    assert w_to_dbm(cfg.p_tx) == pytest.approx(14.0)
    assert cfg.populations == ((ProtocolKind.ALOHA, 1e-3),)
    assert cfg.rate_mode is RateMode.SR
    assert cfg.basic_rate == 500.0


def test_dbm_roundtrip():
    assert dbm_to_w(0.0) == pytest.approx(1e-3)
    assert w_to_dbm(dbm_to_w(-141.59)) == pytest.approx(-141.59)


def test_hyb_frame_arithmetic():
    h = HybParams()
    assert h.slot_duration == 0.048
    assert h.slots * h.slot_duration == pytest.approx(3.84, abs=1e-12)
    assert h.data_window == pytest.approx(52.2, abs=1e-12)


@pytest.mark.parametrize("changes", [
    {"alpha": 1.5}, {"alpha": 0.0}, {"p_star": 1.0}, {"duty_cycle": 0.0},
    {"rates": (1000.0, 500.0)}, {"warmup": 8000.0}, {"lambda_t": -1.0},
    {"protocol_mix": (("LBT", -1e-3),)}, {"probe_distances": (0.0,)},
    {"hyb": HybParams(frame=5.0)}, {"p_tx": 0.0},
])
def test_invalid_configs(changes):
    with pytest.raises(ConfigError):
        ScenarioConfig(**changes)


def test_valid_edge_values():
    ScenarioConfig(duty_cycle=0.028)
    ScenarioConfig(alpha=1.0)
    ScenarioConfig(lambda_s=0.0)


def test_replace_tracks_single_population_density():
    cfg = ScenarioConfig().replace(lambda_s=5e-3, protocol="LBT")
    assert cfg.populations == ((ProtocolKind.LBT, 5e-3),)


def test_empty_scenario():
    cfg = ScenarioConfig(lambda_s=0.0)
    assert sample_deployment(cfg, 1, max_coverage_radius(cfg)) == []


def test_radius_must_be_positive():
    with pytest.raises(ConfigError):
        sample_deployment(ScenarioConfig(), 1, 0.0)


def test_node_count_is_poisson():
    cfg = ScenarioConfig()
    R = max_coverage_radius(cfg)
    mean = cfg.lambda_s * math.pi * R * R
    assert mean == pytest.approx(1848.2, abs=0.1)
    counts = [len(sample_deployment(cfg, s, R)) for s in range(40)]
    # sample mean within 4 standard errors, dispersion close to 1
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / len(counts))
    assert 0.4 < np.var(counts, ddof=1) / mean < 2.0


def test_positions_uniform_on_disk():
    cfg = ScenarioConfig(lambda_s=5e-3)
    R = max_coverage_radius(cfg)
    nodes = sample_deployment(cfg, 11, R)
    d = np.array([n.distance_to_gw for n in nodes])
    theta = np.array([math.atan2(n.y, n.x) for n in nodes])
    assert d.max() <= R
    # (d/R)^2 and the angle are both uniform for a homogeneous disk process
    assert stats.kstest((d / R) ** 2, "uniform").pvalue > 1e-3
    assert stats.kstest((theta + math.pi) / (2 * math.pi), "uniform").pvalue > 1e-3
    # equal-area rings hold equal counts
    ring = np.minimum((10 * (d / R) ** 2).astype(int), 9)
    assert stats.chisquare(np.bincount(ring, minlength=10)).pvalue > 1e-3


def test_deployment_deterministic_and_population_independent():
    R = 767.0
    a = sample_deployment(ScenarioConfig(protocol_mix=(("ALOHA", 1e-3), ("LBT", 1e-4))), 5, R)
    b = sample_deployment(ScenarioConfig(protocol_mix=(("ALOHA", 1e-3), ("LBT", 1e-2))), 5, R)
    pa = [(n.uid, n.x, n.y) for n in a if n.pop == 0]
    pb = [(n.uid, n.x, n.y) for n in b if n.pop == 0]
    assert pa == pb
    assert len({n.uid for n in b}) == len(b)


def test_probe_nodes():
    cfg = ScenarioConfig(lambda_s=0.0, probe_distances=(100.0, 300.0))
    nodes = sample_deployment(cfg, 1, 767.0)
    assert [n.distance_to_gw for n in nodes] == [100.0, 300.0]
    assert all(n.pop == 1 for n in nodes)


def test_sample_arrivals_rate():
    rng = np.random.default_rng(2)
    t = sample_arrivals(0.5, 20_000.0, rng)
    assert np.all(np.diff(t) > 0) and t[-1] < 20_000.0
    assert len(t) == pytest.approx(10_000, abs=400)
    assert sample_arrivals(0.0, 10.0, rng).size == 0


def test_keyed_arrivals_poisson():
    out = keyed_arrivals(3, list(range(200)), 0.01, 7200.0)
    counts = np.array([len(t) for t in out])
    assert counts.mean() == pytest.approx(72.0, abs=2.0)
    gaps = np.concatenate([np.diff([0.0] + t) for t in out if t])
    assert stats.kstest(gaps * 0.01, "expon").pvalue > 1e-3
    # a node's arrivals do not depend on who else is simulated
    assert keyed_arrivals(3, [17], 0.01, 7200.0)[0] == out[17]
