"""Channel-access protocols: pure ALOHA, ED-based LBT and the HYB frame.

Each protocol is a small state machine driven by the engine.  The engine
calls ``on_*`` hooks and the protocol answers by scheduling events or
putting signals on the air through the simulation object.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import rng as rngmod
from .channel import noise_power, sinr_threshold
from .scenario import HybParams, ProtocolKind

# engine event kinds; the numeric order is the tiebreak at equal times
TX_END = 0
TX_START = 1
CCA_DONE = 2
BACKOFF = 3
RETRY = 4
ARRIVAL = 5
FRAME = 6
NOTIFY = 7

# what a transmission carries
DATA = 0
RESERVATION = 1
BEACON = 2
NOTIFICATION = 3

_EPS = 1e-12


class DutyCycleTracker:
    """Airtime book-keeping over a trailing observation window.

    Transmissions of one node never overlap, which makes the airtime inside
    a window ending at the close of a new transmission the binding check.
    """

    __slots__ = ("budget", "window", "_log", "_sum")

    def __init__(self, limit: float, window: float):
        self.budget = limit * window
        self.window = window
        self._log: deque[tuple[float, float]] = deque()
        self._sum = 0.0

    def _prune(self, t: float) -> None:
        horizon = t - self.window
        log = self._log
        while log and log[0][1] <= horizon:
            self._sum -= log[0][1] - log[0][0]
            log.popleft()
        if not log:
            self._sum = 0.0

    def used_since(self, start: float) -> float:
        """Airtime logged after ``start``."""
        cut = 0.0
        for s, e in self._log:
            if s >= start:
                break
            cut += min(e, start) - s
        return self._sum - cut

    def admits(self, t: float, airtime: float) -> bool:
        self._prune(t)
        return self.used_since(t + airtime - self.window) + airtime <= self.budget + _EPS

    def earliest(self, t: float, airtime: float) -> float:
        """Earliest instant >= t at which ``airtime`` fits the budget."""
        if airtime > self.budget + _EPS:
            raise ValueError(f"airtime {airtime} s exceeds the duty budget {self.budget} s")
        self._prune(t)
        ws = t + airtime - self.window
        excess = self.used_since(ws) + airtime - self.budget
        if excess <= _EPS:
            return t
        for s, e in self._log:
            s = max(s, ws)
            if e <= s:
                continue
            if e - s >= excess:
                return s + excess - airtime + self.window
            excess -= e - s
        raise AssertionError("duty log exhausted while searching for an admissible instant")

    def debit(self, t: float, airtime: float) -> None:
        self._log.append((t, t + airtime))
        self._sum += airtime

    @property
    def consumed(self) -> float:
        return self._sum


def ed_threshold(config) -> float:
    """Energy-detection threshold: the basic-rate sensitivity unless overridden."""
    if config.ed_threshold is not None:
        return config.ed_threshold
    return noise_power(config.n0, config.bw) * sinr_threshold(config.basic_rate, config.bw)


@dataclass(frozen=True)
class LbtParams:
    min_be: int
    max_be: int
    max_backoffs: int
    unit_backoff: float
    t_sense: float
    e_sense: float

    @classmethod
    def from_config(cls, config, etsi: bool = False) -> LbtParams:
        return cls(config.lbt_min_be, config.lbt_max_be, config.lbt_max_backoffs,
                   config.lbt_unit_backoff,
                   config.t_sense_etsi if etsi else config.t_sense,
                   config.e_sense_etsi if etsi else config.e_sense)


def backoff_delay(params: LbtParams, be: int, u: float) -> float:
    """Random backoff of ``{0 .. 2^be - 1}`` unit periods from a uniform ``u``."""
    return int(u * (1 << be)) * params.unit_backoff


def lbt_after_busy(params: LbtParams, nb: int, be: int) -> tuple[int, int, bool]:
    """State after a busy CCA: new (NB, BE) and whether the packet is abandoned."""
    nb += 1
    be = min(be + 1, params.max_be)
    return nb, be, nb > params.max_backoffs


@dataclass(frozen=True)
class FramePhase:
    name: str
    start: float
    end: float


def hyb_frame_tick(hyb: HybParams, k: int) -> list[FramePhase]:
    """Layout of frame ``k``: beacon, reservation slots, notification, data window."""
    t0 = k * hyb.frame
    slot = hyb.slot_duration
    res0 = t0 + hyb.beacon
    phases = [FramePhase("beacon", t0, res0)]
    phases += [FramePhase("reservation", res0 + j * slot, res0 + (j + 1) * slot)
               for j in range(hyb.slots)]
    notif = res0 + hyb.slots * slot
    phases.append(FramePhase("notification", notif, notif + hyb.notification))
    phases.append(FramePhase("data", t0 + hyb.data_start, t0 + hyb.frame))
    return phases


def hyb_pick_slot(seed: int, uid: int, frame: int, n_slots: int) -> int:
    """Reservation slot, uniform over ``0 .. n_slots-1``."""
    return int(rngmod.keyed_uniform(seed, rngmod.SLOT, uid, frame) * n_slots)


def hyb_allocate(window_start: float, window_length: float, requests):
    """Pack decoded requests into the data window in reservation-slot order.

    ``requests`` holds ``(slot, uid, airtime, payload)`` tuples.  Returns
    ``(grants, rejected)`` where grants are ``(payload, start, airtime)``.
    Packing stops at the first request that no longer fits.
    """
    grants = []
    rejected = []
    offset = 0.0
    ordered = sorted(requests, key=lambda r: (r[0], r[1]))
    for i, (slot, uid, airtime, payload) in enumerate(ordered):
        if offset + airtime > window_length + _EPS:
            rejected = [r[3] for r in ordered[i:]]
            break
        grants.append((payload, window_start + offset, airtime))
        offset += airtime
    return grants, rejected


class AlohaMac:
    """Transmit on arrival, deferring only when the duty budget is spent."""

    def __init__(self, sim):
        self.sim = sim

    def on_arrival(self, node, t):
        if node.busy:
            node.queue.append(t)
        else:
            self._serve(node, t, t)

    def _serve(self, node, t, packet):
        node.busy = True
        node.packet = packet
        self.on_retry(node, t)

    def on_retry(self, node, t):
        sim = self.sim
        rate = sim.rate_for(node)
        airtime = sim.config.L / rate
        duty = node.duty
        if duty is not None:
            t_ok = duty.earliest(t, airtime)
            if t_ok > t + 1e-9:
                if node.packet >= sim.warmup:
                    node.duty_deferrals += 1
                sim.schedule(t_ok, RETRY, node, None)
                return
            duty.debit(t, airtime)
        sim.transmit(node, t, rate, sim.config.L, DATA, node.packet)

    def on_tx_end(self, node, rec, ok, sinr, t):
        self.sim.book_data(node, rec, ok, sinr)
        node.busy = False
        if node.queue:
            self._serve(node, t, node.queue.popleft())


class LbtMac:
    """Unslotted CSMA/CA with energy-detection CCA and exponential backoff."""

    def __init__(self, sim, params: LbtParams, duty_limited: bool = False):
        self.sim = sim
        self.params = params
        self.threshold = ed_threshold(sim.config)
        self.duty_limited = duty_limited

    def on_arrival(self, node, t):
        if node.busy:
            node.queue.append(t)
        else:
            self._serve(node, t, t)

    def _serve(self, node, t, packet):
        node.busy = True
        node.packet = packet
        node.nb = 0
        node.be = self.params.min_be
        self._backoff(node, t)

    def _backoff(self, node, t):
        sim = self.sim
        node.draws += 1
        u = rngmod.keyed_uniform(sim.seed, rngmod.BACKOFF, node.uid, node.draws)
        sim.schedule(t + backoff_delay(self.params, node.be, u), BACKOFF, node, None)

    def on_backoff(self, node, t):
        sim = self.sim
        if node.packet >= sim.warmup:
            node.energy.cca += self.params.e_sense
        sim.schedule(t + self.params.t_sense, CCA_DONE, node, None)

    def on_cca_done(self, node, t):
        sim = self.sim
        power = sim.ledger.aggregate_power_at(node.x, node.y, node.uid, t - self.params.t_sense, t)
        if power < self.threshold:
            rate = sim.rate_for(node)
            if node.duty is not None:
                airtime = sim.config.L / rate
                if not node.duty.admits(t, airtime):
                    # LBT has no deferral path; a blocked packet waits like a busy CCA
                    if node.packet >= sim.warmup:
                        node.duty_deferrals += 1
                    sim.schedule(node.duty.earliest(t, airtime), BACKOFF, node, None)
                    return
                node.duty.debit(t, airtime)
            sim.trace(t, "cca", node, "idle")
            sim.transmit(node, t, rate, sim.config.L, DATA, node.packet)
            return
        node.nb, node.be, abandon = lbt_after_busy(self.params, node.nb, node.be)
        if abandon:
            sim.trace(t, "cca", node, "abort")
            if node.packet >= sim.warmup:
                node.attempts += 1
                node.cca_aborts += 1
            self._release(node, t)
        else:
            sim.trace(t, "cca", node, "busy")
            self._backoff(node, t)

    def on_tx_end(self, node, rec, ok, sinr, t):
        self.sim.book_data(node, rec, ok, sinr)
        self._release(node, t)

    def _release(self, node, t):
        node.busy = False
        if node.queue:
            self._serve(node, t, node.queue.popleft())


class _Frame:
    __slots__ = ("index", "start", "accepted", "contenders", "counted")

    def __init__(self, index, start, counted):
        self.index = index
        self.start = start
        self.accepted = []
        self.contenders = []
        self.counted = counted


class HybMac:
    """Beacon, FSA reservation phase, notification and scheduled data window.

    A single controller runs the frame for every HYB node of the scenario.
    """

    # frames keep running past the horizon only to flush already queued packets
    DRAIN_FRAMES = 10

    def __init__(self, sim, nodes):
        self.sim = sim
        self.nodes = nodes
        self.hyb: HybParams = sim.config.hyb

    def start(self):
        if self.nodes:
            self.sim.schedule(0.0, FRAME, None, 0)

    def on_arrival(self, node, t):
        node.queue.append(t)

    def on_frame(self, k, t):
        sim, hyb = self.sim, self.hyb
        cfg = sim.config
        frame = _Frame(k, t, sim.warmup <= t < sim.duration)
        sim.downlink(t, hyb.beacon, BEACON)
        rx_beacon = cfg.p_rx * hyb.beacon
        if frame.counted:
            for node in self.nodes:
                node.energy.rx += rx_beacon
        slot_len = hyb.slot_duration
        res0 = t + hyb.beacon
        waiting = False
        for node in self.nodes:
            if not node.queue:
                continue
            slot = hyb_pick_slot(sim.seed, node.uid, k, hyb.slots)
            t_res = res0 + slot * slot_len
            rate = sim.rate_for(node)
            if node.duty is not None and not node.duty.admits(t_res, slot_len + cfg.L / rate):
                if node.queue[0] >= sim.warmup:
                    node.duty_deferrals += 1
                waiting = True
                continue
            packet = node.queue.popleft()
            waiting = waiting or bool(node.queue)
            frame.contenders.append((node, packet))
            sim.schedule(t_res, TX_START, node, (RESERVATION, frame, slot, packet, rate))
        sim.schedule(res0 + hyb.slots * slot_len, NOTIFY, None, frame)
        t_next = (k + 1) * hyb.frame
        if t_next < sim.duration or (waiting and t_next < sim.duration + self.DRAIN_FRAMES * hyb.frame):
            sim.schedule(t_next, FRAME, None, k + 1)

    def on_tx_start(self, node, t, payload):
        sim, hyb = self.sim, self.hyb
        kind, frame, slot, packet, rate = payload
        if kind == RESERVATION:
            if node.duty is not None:
                node.duty.debit(t, hyb.slot_duration)
            sim.transmit(node, t, hyb.rm_rate, hyb.rm_bits, RESERVATION, packet, payload)
        else:
            airtime = sim.config.L / rate
            if node.duty is not None:
                node.duty.debit(t, airtime)
            sim.transmit(node, t, rate, sim.config.L, DATA, packet, payload)

    def on_tx_end(self, node, rec, ok, sinr, t):
        sim = self.sim
        kind, frame, slot, packet, rate = rec.payload
        if kind == DATA:
            sim.book_data(node, rec, ok, sinr)
            return
        if packet >= sim.warmup:
            node.attempts += 1
            if ok:
                node.successes += 1
            else:
                node.sinr_failures += 1
        if ok:
            frame.accepted.append((slot, node.uid, sim.config.L / rate, (node, packet, rate)))

    def on_notify(self, frame, t):
        sim, hyb = self.sim, self.hyb
        sim.downlink(t, hyb.notification, NOTIFICATION)
        rx = sim.config.p_rx * hyb.notification
        for node, packet in frame.contenders:
            if packet >= sim.warmup:
                node.energy.rx += rx
        grants, rejected = hyb_allocate(frame.start + hyb.data_start, hyb.data_window,
                                        frame.accepted)
        for (node, packet, rate), start, _ in grants:
            sim.schedule(start, TX_START, node, (DATA, frame, None, packet, rate))
        for node, packet, rate in rejected:
            sim.trace(t, "reject", node, "no-slot")
            if packet >= sim.warmup:
                node.attempts += 1
                node.hyb_rejections += 1


def make_mac(kind: ProtocolKind, sim, nodes):
    cfg = sim.config
    if kind is ProtocolKind.ALOHA:
        return AlohaMac(sim)
    if kind is ProtocolKind.LBT:
        return LbtMac(sim, LbtParams.from_config(cfg), cfg.lbt_duty_limited)
    if kind is ProtocolKind.LBT_ETSI:
        return LbtMac(sim, LbtParams.from_config(cfg, etsi=True), cfg.lbt_duty_limited)
    if kind is ProtocolKind.HYB:
        return HybMac(sim, nodes)
    raise ValueError(f"unknown protocol {kind!r}")


def duty_constrained(kind: ProtocolKind, config) -> bool:
    if kind in (ProtocolKind.ALOHA, ProtocolKind.HYB):
        return True
    return config.lbt_duty_limited
