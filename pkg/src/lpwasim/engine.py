"""Discrete-event core: event queue, shared-channel ledger and reception verdicts."""

from __future__ import annotations

import heapq
import math
from collections import deque
from itertools import accumulate

import numpy as np

from . import mac as macmod
from . import rng as rngmod
from .channel import max_coverage_radius, noise_power, path_gain, sinr_threshold
from .mac import (ARRIVAL, BACKOFF, CCA_DONE, FRAME, NOTIFY, RETRY, TX_END, TX_START,
                  DutyCycleTracker)
from .metrics import MetricsTable, bin_by_distance
from .rate_adaptation import SinrEstimator, select_index
from .scenario import GATEWAY_UID, ProtocolKind, ScenarioConfig, keyed_arrivals, sample_deployment

EVENT_NAMES = {TX_END: "tx_end", TX_START: "tx_start", CCA_DONE: "cca_complete",
               BACKOFF: "backoff_expiry", RETRY: "duty_retry", ARRIVAL: "arrival",
               FRAME: "frame_boundary", NOTIFY: "notification"}
TX_KIND_NAMES = {macmod.DATA: "data", macmod.RESERVATION: "reservation",
                 macmod.BEACON: "beacon", macmod.NOTIFICATION: "notification"}


_INV53 = 2.0 ** -53


class SimulationDefect(RuntimeError):
    """The event machinery reached an impossible state."""


class TransmissionRecord:
    """One signal on the air."""

    __slots__ = ("src", "uid", "start", "end", "rate", "bits", "kind", "p_gw", "interference",
                 "x", "y", "p_tx", "key", "sense_key", "packet", "payload", "slot", "active")

    def __init__(self, uid, start, rate, bits, kind, p_gw, x, y, p_tx, key,
                 src=None, packet=-1.0, payload=None, end=None):
        self.src = src
        self.uid = uid
        self.start = start
        self.end = start + bits / rate if end is None else end
        self.rate = rate
        self.bits = bits
        self.kind = kind
        self.p_gw = p_gw  # None: not received by the gateway
        self.interference = 0.0
        self.x = x
        self.y = y
        self.p_tx = p_tx
        self.key = key
        self.packet = packet
        self.payload = payload
        self.slot = -1
        self.sense_key = 0
        self.active = False

    @property
    def duration(self):
        return self.end - self.start


class ChannelLedger:
    """Active transmissions, gateway interference energy and sensing queries.

    Gateway interference is flushed at every start/end boundary, so each
    record accumulates exactly the energy of its overlappers.  A copy of every
    signal is also kept in flat arrays for energy-detection queries; ended
    signals stay there for ``hold`` seconds so that a sensing window reaching
    back in time still sees them.
    """

    # below this many signals a plain loop beats numpy call overhead
    VECTOR_MIN = 24

    def __init__(self, noise: float, bw: float, A: float, beta: float, seed: int = 0,
                 hold: float = 0.0, fading: bool = True):
        self.noise = noise
        self.bw = bw
        self.A = A
        self.beta = beta
        self.seed = seed
        self.hold = hold
        self.fading = fading
        self.on_air: list[TransmissionRecord] = []
        self.last_update = 0.0
        cap = 64
        self._sx = np.zeros(cap)
        self._sy = np.zeros(cap)
        self._sp = np.zeros(cap)
        self._sstart = np.full(cap, np.inf)
        self._send = np.full(cap, -np.inf)
        self._ssrc = np.full(cap, -1, dtype=np.int64)
        self._skey = np.zeros(cap, dtype=np.uint64)
        self._gp = np.zeros(cap)  # gateway power of on-air signals, 0 elsewhere
        self._gi = np.zeros(cap)  # interference energy gathered on the vector path
        self._free: list[int] = list(range(cap - 1, -1, -1))
        self._hwm = 0
        self._retired: deque[tuple[float, int]] = deque()
        self._stored: dict[int, TransmissionRecord] = {}

    # gateway side

    def _flush(self, t: float) -> None:
        dt = t - self.last_update
        if dt < 0:
            raise SimulationDefect(f"ledger moved backwards: {t} < {self.last_update}")
        on = self.on_air
        if dt > 0 and len(on) > 1:
            # energy from the others = exclusive prefix + suffix sums, never a difference
            if len(on) < self.VECTOR_MIN:
                powers = [r.p_gw for r in on]
                pre = list(accumulate(powers))
                suf = list(accumulate(reversed(powers)))[::-1]
                last = len(on) - 1
                for i, r in enumerate(on):
                    others = (pre[i - 1] if i else 0.0) + (suf[i + 1] if i < last else 0.0)
                    r.interference += others * dt
            else:
                n = self._hwm
                p = self._gp[:n]
                others = np.zeros(n)
                np.cumsum(p[:-1], out=others[1:])
                others[:-1] += np.cumsum(p[:0:-1])[::-1]
                self._gi[:n] += others * dt
        self.last_update = t

    def start(self, rec: TransmissionRecord, t: float) -> None:
        if rec.active:
            raise SimulationDefect("transmission activated twice")
        if t != rec.start:
            raise SimulationDefect(f"start time mismatch: {t} != {rec.start}")
        self._flush(t)
        rec.active = True
        self._add_sensing(rec, t)
        if rec.p_gw is not None:
            self.on_air.append(rec)
            self._gp[rec.slot] = rec.p_gw
            self._gi[rec.slot] = 0.0

    def end(self, rec: TransmissionRecord, t: float):
        """Remove ``rec``; return ``(decoded, sinr)`` or None for downlink signals."""
        if not rec.active:
            raise SimulationDefect("ending a transmission that is not active")
        self._flush(t)
        rec.active = False
        self._retired.append((rec.end, rec.slot))
        if rec.p_gw is None:
            return None
        self.on_air.remove(rec)
        rec.interference += self._gi[rec.slot]
        self._gp[rec.slot] = 0.0
        self._gi[rec.slot] = 0.0
        dur = rec.end - rec.start
        sinr = (rec.p_gw * dur) / (self.noise * dur + rec.interference)
        return sinr >= sinr_threshold(rec.rate, self.bw), sinr

    # sensing side

    def _collect(self, now: float) -> None:
        horizon = now - self.hold
        ret = self._retired
        while ret and ret[0][0] < horizon:
            _, slot = ret.popleft()
            self._sstart[slot] = np.inf
            self._send[slot] = -np.inf
            self._ssrc[slot] = -1
            self._free.append(slot)
            del self._stored[slot]

    def _grow(self) -> None:
        cap = self._sx.size
        new = cap * 2
        for name, fill in (("_sx", 0.0), ("_sy", 0.0), ("_sp", 0.0), ("_sstart", np.inf),
                           ("_send", -np.inf), ("_gp", 0.0), ("_gi", 0.0)):
            arr = getattr(self, name)
            ext = np.full(new, fill)
            ext[:cap] = arr
            setattr(self, name, ext)
        src = np.full(new, -1, dtype=np.int64)
        src[:cap] = self._ssrc
        self._ssrc = src
        key = np.zeros(new, dtype=np.uint64)
        key[:cap] = self._skey
        self._skey = key
        self._free.extend(range(new - 1, cap - 1, -1))

    def _add_sensing(self, rec: TransmissionRecord, t: float) -> None:
        self._collect(t)
        if not self._free:
            self._grow()
        slot = self._free.pop()
        rec.slot = slot
        self._sx[slot] = rec.x
        self._sy[slot] = rec.y
        self._sp[slot] = rec.p_tx
        self._sstart[slot] = rec.start
        self._send[slot] = rec.end
        self._ssrc[slot] = rec.uid
        rec.sense_key = rngmod.key_hash(self.seed, rngmod.SENSE_FADING, rec.key)
        self._skey[slot] = rec.sense_key
        self._stored[slot] = rec
        if slot >= self._hwm:
            self._hwm = slot + 1

    def aggregate_power_at(self, x: float, y: float, uid: int, t1: float, t2: float) -> float:
        """Time-averaged received power at ``(x, y)`` over ``[t1, t2]``.

        Signals emitted by ``uid`` itself are excluded.  Per-pair fading is a
        keyed draw, so repeated queries of one pair see the same block fade.
        """
        if t2 <= t1:
            raise ValueError("sensing window must have positive length")
        self._collect(t1)
        if len(self._stored) < self.VECTOR_MIN:
            return self._power_loop(x, y, uid, t1, t2)
        return self._power_vector(x, y, uid, t1, t2)

    def _power_loop(self, x, y, uid, t1, t2) -> float:
        A, mbeta, fading = self.A, -self.beta, self.fading
        mix = rngmod.mix
        total = 0.0
        for rec in self._stored.values():
            ov = (rec.end if rec.end < t2 else t2) - (rec.start if rec.start > t1 else t1)
            if ov <= 0 or rec.uid == uid:
                continue
            d = math.hypot(rec.x - x, rec.y - y)
            if d <= 0:
                raise ValueError("co-located transmitter and sensing node")
            p = rec.p_tx * (A * d) ** mbeta
            if fading:
                p *= -math.log(((mix(rec.sense_key ^ uid) >> 11) + 0.5) * _INV53)
            total += p * ov
        return total / (t2 - t1)

    def _power_vector(self, x, y, uid, t1, t2) -> float:
        n = self._hwm
        ov = np.minimum(self._send[:n], t2) - np.maximum(self._sstart[:n], t1)
        idx = np.flatnonzero(ov > 0)
        if idx.size == 0:
            return 0.0
        idx = idx[self._ssrc[idx] != uid]
        if idx.size == 0:
            return 0.0
        d = np.hypot(self._sx[idx] - x, self._sy[idx] - y)
        rx = self._sp[idx] * path_gain(d, self.A, self.beta)
        if self.fading:
            rx = rx * rngmod.exponential_from_hash(rngmod.mix_array(self._skey[idx] ^ np.uint64(uid)))
        return float(np.dot(rx, ov[idx])) / (t2 - t1)

    def sensing_fading(self, rec: TransmissionRecord, uid: int) -> float:
        """The fade applied between ``rec``'s source and the sensing node ``uid``."""
        if not self.fading:
            return 1.0
        return rngmod.keyed_exponential(self.seed, rngmod.SENSE_FADING, rec.key, uid)


def start_transmission(ledger: ChannelLedger, record: TransmissionRecord, t: float) -> ChannelLedger:
    ledger.start(record, t)
    return ledger


def end_transmission(ledger: ChannelLedger, record: TransmissionRecord, t: float):
    return ledger.end(record, t)


class Simulation:
    """One replication of a scenario."""

    def __init__(self, config: ScenarioConfig, seed: int, nodes=None, trace: bool = False,
                 keep_log: bool = False):
        self.config = config
        self.seed = seed
        self.duration = config.sim_duration
        self.warmup = config.warmup
        self.radius = max_coverage_radius(config)
        self.nodes = sample_deployment(config, seed, self.radius) if nodes is None else list(nodes)
        self.noise = noise_power(config.n0, config.bw)
        self.ledger = ChannelLedger(self.noise, config.bw, config.A, config.beta, seed,
                                    hold=max(config.t_sense, config.t_sense_etsi),
                                    fading=config.fading)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._thresholds = [sinr_threshold(r, config.bw) for r in config.rates]
        self.trace_lines: list[tuple] | None = [] if trace else None
        self.tx_log: list[tuple] | None = [] if keep_log else None
        self.tx_started = 0
        self.verdicts = 0
        self.frames = 0
        self._downlinks = 0
        self._setup()

    # wiring

    def _setup(self) -> None:
        cfg = self.config
        ra = cfg.rate_mode.value == "RA"
        by_kind: dict[ProtocolKind, list] = {}
        for node in self.nodes:
            by_kind.setdefault(node.kind, []).append(node)
            node.rate = cfg.basic_rate
            node.sinr = SinrEstimator(cfg.alpha) if ra else None
            if macmod.duty_constrained(node.kind, cfg):
                node.duty = DutyCycleTracker(cfg.duty_cycle, cfg.duty_window)
        self.macs = {kind: macmod.make_mac(kind, self, nodes) for kind, nodes in by_kind.items()}
        bins = bin_by_distance([n.distance_to_gw for n in self.nodes], self.radius, cfg.n_bins)
        for node, b in zip(self.nodes, bins):
            node.bin = int(b)
        arrivals = keyed_arrivals(self.seed, [n.uid for n in self.nodes], cfg.lambda_t,
                                  self.duration)
        for node, times in zip(self.nodes, arrivals):
            node.arrivals = times
            node.next_arrival = 0
            if times:
                self.schedule(times[0], ARRIVAL, node, None)
        hyb = self.macs.get(ProtocolKind.HYB)
        if hyb is not None:
            hyb.start()

    def schedule(self, t: float, kind: int, node, obj) -> None:
        if t < self.now:
            raise SimulationDefect(f"scheduling into the past: {t} < {self.now}")
        self._seq += 1
        uid = node.uid if node is not None else GATEWAY_UID
        heapq.heappush(self._heap, (t, kind, uid, self._seq, node, obj))

    def trace(self, t, kind, node, outcome) -> None:
        if self.trace_lines is not None:
            self.trace_lines.append((t, kind, node.uid if node is not None else GATEWAY_UID, outcome))

    # services used by the MAC layer

    def rate_for(self, node) -> float:
        est = node.sinr
        if est is None or not est.initialized:
            rate = self.config.basic_rate
        else:
            rate = self.config.rates[select_index(est.estimate, self._thresholds, self.config.p_star)]
        node.rate = rate
        return rate

    def transmit(self, node, t, rate, bits, kind, packet, payload=None) -> TransmissionRecord:
        cfg = self.config
        node.tx_seq += 1
        key = (node.uid << 32) | node.tx_seq
        g = path_gain(node.distance_to_gw, cfg.A, cfg.beta)
        h = rngmod.keyed_exponential(self.seed, rngmod.GW_FADING, key) if cfg.fading else 1.0
        rec = TransmissionRecord(node.uid, t, rate, bits, kind, cfg.p_tx * g * h, node.x, node.y,
                                 cfg.p_tx, key, src=node, packet=packet, payload=payload)
        self.ledger.start(rec, t)
        self.tx_started += 1
        if packet >= self.warmup:
            node.energy.tx += (cfg.p_circuit + cfg.p_tx) * (rec.end - rec.start)
        if self.tx_log is not None:
            self.tx_log.append((node.uid, rec.start, rec.end, kind))
        self.trace(t, "tx_start", node, TX_KIND_NAMES[kind])
        self._push_end(rec)
        return rec

    def downlink(self, t, duration, kind) -> TransmissionRecord:
        """Gateway broadcast: heard by sensing nodes, not by the gateway itself."""
        self._downlinks += 1
        key = (GATEWAY_UID << 32) | self._downlinks
        rec = TransmissionRecord(GATEWAY_UID, t, 1.0, duration, kind, None, 0.0, 0.0,
                                 self.config.p_tx, key, end=t + duration)
        self.ledger.start(rec, t)
        if self.tx_log is not None:
            self.tx_log.append((GATEWAY_UID, rec.start, rec.end, kind))
        self._push_end(rec)
        return rec

    def _push_end(self, rec) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (rec.end, TX_END, rec.uid, self._seq, rec.src, rec))

    def book_data(self, node, rec, ok, sinr) -> None:
        if rec.packet >= self.warmup:
            node.attempts += 1
            if ok:
                node.successes += 1
                node.delivered_packets += 1
            else:
                node.sinr_failures += 1
        if node.sinr is not None:
            node.sinr.update(sinr)

    # main loop

    def run(self) -> MetricsTable:
        heap = self._heap
        pop = heapq.heappop
        macs = self.macs
        ledger = self.ledger
        tracing = self.trace_lines is not None
        while heap:
            t, kind, uid, _, node, obj = pop(heap)
            if t < self.now:
                raise SimulationDefect(f"event at {t} delivered after clock {self.now}")
            self.now = t
            if kind == TX_END:
                verdict = ledger.end(obj, t)
                if verdict is None:
                    continue
                self.verdicts += 1
                ok, sinr = verdict
                if tracing:
                    self.trace(t, "tx_end", node, "success" if ok else "failure")
                macs[node.kind].on_tx_end(node, obj, ok, sinr, t)
            elif kind == ARRIVAL:
                node.next_arrival += 1
                if node.next_arrival < len(node.arrivals):
                    self.schedule(node.arrivals[node.next_arrival], ARRIVAL, node, None)
                if t >= self.warmup:
                    node.generated += 1
                if tracing:
                    self.trace(t, "arrival", node, "")
                macs[node.kind].on_arrival(node, t)
            elif kind == BACKOFF:
                macs[node.kind].on_backoff(node, t)
            elif kind == CCA_DONE:
                macs[node.kind].on_cca_done(node, t)
            elif kind == RETRY:
                macs[node.kind].on_retry(node, t)
            elif kind == TX_START:
                macs[node.kind].on_tx_start(node, t, obj)
            elif kind == FRAME:
                self.frames += 1
                if tracing:
                    self.trace(t, "frame_boundary", None, str(obj))
                macs[ProtocolKind.HYB].on_frame(obj, t)
            elif kind == NOTIFY:
                macs[ProtocolKind.HYB].on_notify(obj, t)
            else:
                raise SimulationDefect(f"unknown event kind {kind!r}")
        if ledger.on_air:
            raise SimulationDefect("transmissions still on air after the queue drained")
        return self.metrics()

    def metrics(self) -> MetricsTable:
        return MetricsTable.from_nodes(self.nodes, self.config, self.radius)

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,kind,node,outcome\n")
            for t, kind, uid, outcome in self.trace_lines or ():
                fh.write(f"{t!r},{kind},{uid},{outcome}\n")


def run(config: ScenarioConfig, seed: int, nodes=None, trace: bool = False) -> MetricsTable:
    """Simulate one replication and return its metrics."""
    return Simulation(config, seed, nodes=nodes, trace=trace).run()


def aggregate_power_at(sim: Simulation, node, t: float, t_sense: float) -> float:
    return sim.ledger.aggregate_power_at(node.x, node.y, node.uid, t, t + t_sense)
