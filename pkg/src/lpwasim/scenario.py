"""Scenario parameters, node deployment and traffic generation."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .energy import EnergyLedger
from .rate_adaptation import SinrEstimator


class ConfigError(ValueError):
    """Invalid scenario parameters."""


class ProtocolKind(str, enum.Enum):
    ALOHA = "ALOHA"
    LBT = "LBT"
    LBT_ETSI = "LBT-ETSI"
    HYB = "HYB"


class RateMode(str, enum.Enum):
    SR = "SR"
    RA = "RA"


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def w_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w * 1000.0)


# node uid layout: population index in the high bits, node index below
UID_SHIFT = 24
GATEWAY_UID = (1 << 31) - 1


@dataclass(frozen=True)
class HybParams:
    frame: float = 60.0  # T_W, s
    slots: int = 80  # N_RM
    rm_bits: int = 24  # L_RM
    rm_rate: float = 500.0  # R_RM, bit/s
    beacon: float = 0.12  # T_B, s
    notification: float = 3.84  # T_RA, s

    @property
    def slot_duration(self) -> float:
        return self.rm_bits / self.rm_rate

    @property
    def data_start(self) -> float:
        """Offset of the data window from the frame start."""
        return self.beacon + self.slots * self.slot_duration + self.notification

    @property
    def data_window(self) -> float:
        return self.frame - self.data_start


@dataclass(frozen=True)
class ScenarioConfig:
    """Every model parameter.  Powers in W, times in s, rates in bit/s."""

    lambda_s: float = 1e-3
    lambda_t: float = 0.01
    p_tx: float = dbm_to_w(14.0)
    freq: float = 868e6
    A: float = 36.36
    beta: float = 3.5
    L: int = 240
    rates: tuple[float, ...] = (500.0, 1000.0, 5000.0, 10000.0, 50000.0, 100000.0)
    bw: float = 400e3
    n0: float = 2e-20
    duty_cycle: float = 0.01
    duty_window: float = 3600.0
    p_circuit: float = dbm_to_w(16.0)
    p_rx: float = dbm_to_w(13.0)
    p_cca: float = dbm_to_w(10.0)
    t_sense: float = 0.4e-3
    e_sense: float = 3.98e-6
    t_sense_etsi: float = 5e-3
    e_sense_etsi: float = 0.2e-3
    alpha: float = 0.1
    p_star: float = 0.05
    hyb: HybParams = field(default_factory=HybParams)
    rate_mode: RateMode = RateMode.SR
    protocol: ProtocolKind = ProtocolKind.ALOHA
    protocol_mix: tuple[tuple[ProtocolKind, float], ...] | None = None
    sim_duration: float = 7200.0
    warmup: float = 600.0
    replications: int = 20
    base_seed: int = 1
    n_bins: int = 10
    ed_threshold: float | None = None  # W; None -> basic-rate sensitivity
    coverage_radius: float | None = None  # m; None -> link budget
    lbt_min_be: int = 3
    lbt_max_be: int = 5
    lbt_max_backoffs: int = 4
    lbt_unit_backoff: float = 320e-6
    lbt_duty_limited: bool = False
    fading: bool = True
    probe_distances: tuple[float, ...] = ()

    def __post_init__(self):
        if self.protocol_mix is not None:
            mix = tuple((ProtocolKind(k), float(d)) for k, d in self.protocol_mix)
            if not mix:
                raise ConfigError("protocol_mix needs at least one population")
            object.__setattr__(self, "protocol_mix", mix)
        object.__setattr__(self, "protocol", ProtocolKind(self.protocol))
        object.__setattr__(self, "rate_mode", RateMode(self.rate_mode))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "probe_distances", tuple(float(d) for d in self.probe_distances))
        self.validate()

    def validate(self) -> None:
        positive = ("p_tx", "freq", "A", "beta", "L", "bw", "n0", "duty_window",
                    "p_circuit", "p_rx", "p_cca", "t_sense", "e_sense", "t_sense_etsi",
                    "e_sense_etsi", "sim_duration", "lbt_unit_backoff")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        # zero densities and rates are legal: they describe empty processes
        if self.lambda_s < 0 or self.lambda_t < 0:
            raise ConfigError("lambda_s and lambda_t must be >= 0")
        if not 0 < self.duty_cycle <= 1:
            raise ConfigError("duty_cycle must lie in (0, 1]")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 < self.p_star < 1:
            raise ConfigError("p_star must lie in (0, 1)")
        if not self.rates or any(r <= 0 for r in self.rates):
            raise ConfigError("rates must be a non-empty set of positive bitrates")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ConfigError("rates must be strictly ascending")
        if not 0 <= self.warmup < self.sim_duration:
            raise ConfigError("warmup must lie in [0, sim_duration)")
        if self.replications < 1 or self.n_bins < 1:
            raise ConfigError("replications and n_bins must be >= 1")
        if not 0 <= self.lbt_min_be <= self.lbt_max_be or self.lbt_max_backoffs < 0:
            raise ConfigError("LBT backoff limits must satisfy 0 <= min_be <= max_be, max_backoffs >= 0")
        for kind, density in self.populations:
            if density < 0:
                raise ConfigError(f"density of {kind.value} must be >= 0")
        if self.ed_threshold is not None and self.ed_threshold <= 0:
            raise ConfigError("ed_threshold must be > 0")
        if self.coverage_radius is not None and self.coverage_radius <= 0:
            raise ConfigError("coverage_radius must be > 0")
        if any(d <= 0 for d in self.probe_distances):
            raise ConfigError("probe distances must be > 0")
        h = self.hyb
        if h.slots < 1:
            raise ConfigError("hyb slots must be >= 1")
        if min(h.frame, h.rm_bits, h.rm_rate, h.beacon, h.notification) <= 0:
            raise ConfigError("hyb durations, sizes and rates must be > 0")
        if h.data_window <= 0:
            raise ConfigError(
                f"hyb frame leaves no data window: {h.beacon} + {h.slots}*{h.slot_duration} "
                f"+ {h.notification} >= {h.frame}")

    @property
    def populations(self) -> tuple[tuple[ProtocolKind, float], ...]:
        """(kind, spatial density) per population; one population at lambda_s by default."""
        if self.protocol_mix is None:
            return ((self.protocol, self.lambda_s),)
        return self.protocol_mix

    @property
    def basic_rate(self) -> float:
        return self.rates[0]

    def replace(self, **changes) -> ScenarioConfig:
        return replace(self, **changes)


@dataclass(eq=False, slots=True)
class Node:
    uid: int
    pop: int
    kind: ProtocolKind
    x: float
    y: float
    distance_to_gw: float = 0.0
    bin: int = 0
    rate: float = 500.0
    sinr: SinrEstimator | None = None
    energy: EnergyLedger = field(default_factory=EnergyLedger)
    duty: object = None  # DutyCycleTracker for duty-constrained nodes
    # MAC state
    queue: deque = field(default_factory=deque)
    busy: bool = False
    packet: float = -1.0  # arrival time of the packet in service
    nb: int = 0
    be: int = 0
    tx_seq: int = 0
    draws: int = 0
    arrivals: list = field(default_factory=list)
    next_arrival: int = 0
    # outcome counters (measured packets only)
    generated: int = 0
    attempts: int = 0
    successes: int = 0
    sinr_failures: int = 0
    cca_aborts: int = 0
    hyb_rejections: int = 0
    duty_deferrals: int = 0
    delivered_packets: int = 0

    def __post_init__(self):
        self.distance_to_gw = math.hypot(self.x, self.y)


def make_uid(pop: int, index: int) -> int:
    return (pop << UID_SHIFT) | index


def sample_deployment(config: ScenarioConfig, seed: int, radius: float) -> list[Node]:
    """Independent Poisson populations, uniform on the disk of ``radius``.

    Each population draws from its own stream so its nodes do not depend on
    the densities of the other populations.  Probe nodes, if configured, are
    appended on the positive x axis as an extra population.
    """
    if not radius > 0:
        raise ConfigError(f"coverage radius must be > 0, got {radius!r}")
    nodes: list[Node] = []
    area = math.pi * radius * radius
    for pop, (kind, density) in enumerate(config.populations):
        g = rngmod.stream(seed, rngmod.DEPLOY, pop)
        n = int(g.poisson(density * area)) if density > 0 else 0
        if n == 0:
            continue
        u = g.random((n, 2))
        r = radius * np.sqrt(u[:, 0])
        theta = 2.0 * math.pi * u[:, 1]
        xs = (r * np.cos(theta)).tolist()
        ys = (r * np.sin(theta)).tolist()
        for i in range(n):
            nodes.append(Node(uid=make_uid(pop, i), pop=pop, kind=kind, x=xs[i], y=ys[i]))
    if config.probe_distances:
        pop = len(config.populations)
        kind = config.populations[0][0]
        for i, d in enumerate(config.probe_distances):
            nodes.append(Node(uid=make_uid(pop, i), pop=pop, kind=kind, x=d, y=0.0))
    return nodes


def sample_arrivals(lambda_t: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrival epochs on ``[0, duration)``."""
    if lambda_t <= 0:
        return np.empty(0)
    times = []
    t = 0.0
    block = max(16, int(lambda_t * duration * 1.1) + 16)
    while True:
        gaps = rng.exponential(1.0 / lambda_t, block)
        epochs = t + np.cumsum(gaps)
        times.append(epochs[epochs < duration])
        if epochs[-1] >= duration:
            break
        t = float(epochs[-1])
    return np.concatenate(times)


def keyed_arrivals(seed: int, uids: list[int], lambda_t: float, duration: float) -> list[list[float]]:
    """Poisson arrivals for many nodes at once, each keyed by its uid.

    Gap ``j`` of node ``u`` is the keyed exponential ``(seed, TRAFFIC, u, j)``,
    so a node's traffic is identical whatever else is deployed.
    """
    if lambda_t <= 0 or not uids:
        return [[] for _ in uids]
    mean = lambda_t * duration
    width = int(mean + 8.0 * math.sqrt(mean) + 16)
    base = np.array([rngmod.key_hash(seed, rngmod.TRAFFIC, u) for u in uids], dtype=np.uint64)
    out: list[list[float]] = [None] * len(uids)  # type: ignore[list-item]
    offset = 0
    start = np.zeros(len(uids))
    pending = np.arange(len(uids))
    chunks: list[list[np.ndarray]] = [[] for _ in uids]
    while pending.size:
        j = np.arange(offset, offset + width, dtype=np.uint64)
        h = rngmod.mix_array(base[pending, None] ^ j[None, :])
        gaps = rngmod.exponential_from_hash(h) / lambda_t
        epochs = start[pending, None] + np.cumsum(gaps, axis=1)
        done = epochs[:, -1] >= duration
        for row, i in enumerate(pending):
            e = epochs[row]
            chunks[i].append(e[e < duration] if done[row] else e)
        start[pending] = epochs[:, -1]
        pending = pending[~done]
        offset += width
    for i, parts in enumerate(chunks):
        out[i] = np.concatenate(parts).tolist() if len(parts) > 1 else parts[0].tolist()
    return out
