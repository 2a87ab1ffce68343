"""Distance-binned outcome counters and replication statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

CSV_HEADER = ["protocol", "rate_mode", "bin_low_m", "bin_high_m", "attempts", "successes",
              "sinr_failures", "cca_aborts", "hyb_rejections", "p_fail", "p_fail_ci95",
              "abort_rate", "energy_j", "delivered_bits", "efficiency_bit_per_j",
              "efficiency_ci95", "throughput_bit_per_s", "throughput_ci95"]

COUNTERS = ("nodes", "generated", "attempts", "successes", "sinr_failures", "cca_aborts",
            "hyb_rejections", "duty_deferrals", "delivered_packets", "delivered_bits",
            "energy_tx", "energy_cca", "energy_rx", "eff_sum", "eff_nodes")


def bin_by_distance(distances, radius: float, n_bins: int) -> np.ndarray:
    """Equal-width annulus index; the outer edge belongs to the last bin."""
    d = np.asarray(distances, dtype=float)
    idx = np.floor(d / (radius / n_bins)).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def p_fail(successes, sinr_failures, hyb_rejections=0):
    """Share of evaluated messages below threshold, counting rejected requests.

    Returns None for an empty bin.
    """
    total = successes + sinr_failures + hyb_rejections
    if total == 0:
        return None
    return (sinr_failures + hyb_rejections) / total


def confidence_interval(samples, level: float = 0.95):
    """Student-t interval over replication values: ``(mean, half_width)``.

    The half width is None with fewer than two samples.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return None, None
    mean = float(x.mean())
    if x.size < 2:
        return mean, None
    s = float(x.std(ddof=1))
    return mean, float(stats.t.ppf(0.5 + level / 2, x.size - 1) * s / math.sqrt(x.size))


@dataclass(frozen=True)
class ReplicationStats:
    mean: float
    std: float | None
    n: int
    half_width: float | None

    @classmethod
    def from_samples(cls, samples) -> ReplicationStats:
        x = np.asarray(samples, dtype=float)
        mean, hw = confidence_interval(x)
        std = float(x.std(ddof=1)) if x.size >= 2 else None
        return cls(mean, std, int(x.size), hw)


class MetricsTable:
    """Counters per (population, distance bin) for one or more pooled runs."""

    def __init__(self, labels, rate_mode: str, edges, duration: float, counters=None,
                 packet_bits: int = 240):
        self.labels = list(labels)
        self.rate_mode = rate_mode
        self.edges = np.asarray(edges, dtype=float)
        self.duration = duration
        self.packet_bits = packet_bits
        shape = (len(self.labels), self.edges.size - 1)
        self.counters = {k: np.zeros(shape) for k in COUNTERS}
        if counters:
            for k, v in counters.items():
                self.counters[k] = np.asarray(v, dtype=float).reshape(shape)

    @classmethod
    def from_nodes(cls, nodes, config, radius: float) -> MetricsTable:
        labels = [k.value for k, _ in config.populations]
        if config.probe_distances:
            labels.append(config.populations[0][0].value + "+probe")
        edges = np.linspace(0.0, radius, config.n_bins + 1)
        table = cls(labels, config.rate_mode.value, edges, config.sim_duration - config.warmup,
                    packet_bits=config.L)
        P, B = table.shape
        if not nodes:
            return table
        flat = np.array([n.pop * B + n.bin for n in nodes])
        delivered = np.array([n.delivered_packets for n in nodes], dtype=float)
        e_tx = np.array([n.energy.tx for n in nodes])
        e_cca = np.array([n.energy.cca for n in nodes])
        e_rx = np.array([n.energy.rx for n in nodes])
        total = e_tx + e_cca + e_rx
        spent = total > 0
        bits = delivered * config.L
        values = {
            "nodes": np.ones(len(nodes)),
            "delivered_packets": delivered,
            "delivered_bits": bits,
            "energy_tx": e_tx,
            "energy_cca": e_cca,
            "energy_rx": e_rx,
            "eff_sum": np.divide(bits, total, out=np.zeros_like(bits), where=spent),
            "eff_nodes": spent.astype(float),
        }
        for name in ("generated", "attempts", "successes", "sinr_failures", "cca_aborts",
                     "hyb_rejections", "duty_deferrals"):
            values[name] = np.array([getattr(n, name) for n in nodes], dtype=float)
        for name, v in values.items():
            table.counters[name] = np.bincount(flat, weights=v, minlength=P * B).reshape(P, B)
        return table

    @property
    def shape(self):
        return self.counters["attempts"].shape

    def __getitem__(self, name: str) -> np.ndarray:
        return self.counters[name]

    def merge(self, other: MetricsTable) -> MetricsTable:
        """Pool raw counters; durations add up."""
        if self.labels != other.labels or not np.array_equal(self.edges, other.edges):
            raise ValueError("cannot merge tables with different populations or bins")
        merged = {k: self.counters[k] + other.counters[k] for k in COUNTERS}
        return MetricsTable(self.labels, self.rate_mode, self.edges,
                            self.duration + other.duration, merged, self.packet_bits)

    def collapse(self) -> MetricsTable:
        """Single whole-disk bin per population."""
        merged = {k: v.sum(axis=1, keepdims=True) for k, v in self.counters.items()}
        return MetricsTable(self.labels, self.rate_mode, [self.edges[0], self.edges[-1]],
                            self.duration, merged, self.packet_bits)

    def population(self, label: str) -> int:
        return self.labels.index(label)

    # derived metrics; NaN marks an empty cell

    @staticmethod
    def _ratio(num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)

    def p_fail(self) -> np.ndarray:
        c = self.counters
        bad = c["sinr_failures"] + c["hyb_rejections"]
        return self._ratio(bad, c["successes"] + bad)

    def abort_rate(self) -> np.ndarray:
        return self._ratio(self.counters["cca_aborts"], self.counters["attempts"])

    def energy(self) -> np.ndarray:
        c = self.counters
        return c["energy_tx"] + c["energy_cca"] + c["energy_rx"]

    def efficiency(self) -> np.ndarray:
        """Mean per-node delivered bits per joule, over nodes that spent energy."""
        return self._ratio(self.counters["eff_sum"], self.counters["eff_nodes"])

    def throughput(self) -> np.ndarray:
        """Delivered bit/s."""
        return self.counters["delivered_bits"] / self.duration

    def packet_throughput(self) -> np.ndarray:
        return self.counters["delivered_packets"] / self.duration


def _stat(values):
    v = [x for x in values if not math.isnan(x)]
    if not v:
        return None, None
    return confidence_interval(v)


def summarize(tables: list[MetricsTable]) -> list[dict]:
    """One row per population and bin: pooled counters plus replication CIs."""
    if not tables:
        return []
    pooled = tables[0]
    for t in tables[1:]:
        pooled = pooled.merge(t)
    pf = np.stack([t.p_fail() for t in tables])
    ab = np.stack([t.abort_rate() for t in tables])
    ef = np.stack([t.efficiency() for t in tables])
    tp = np.stack([t.throughput() for t in tables])
    rows = []
    P, B = pooled.shape
    c = pooled.counters
    energy = pooled.energy()
    for p in range(P):
        for b in range(B):
            pf_m, pf_h = _stat(pf[:, p, b])
            ab_m, _ = _stat(ab[:, p, b])
            ef_m, ef_h = _stat(ef[:, p, b])
            tp_m, tp_h = _stat(tp[:, p, b])
            rows.append({
                "protocol": pooled.labels[p],
                "rate_mode": pooled.rate_mode,
                "bin_low_m": float(pooled.edges[b]),
                "bin_high_m": float(pooled.edges[b + 1]),
                "attempts": int(c["attempts"][p, b]),
                "successes": int(c["successes"][p, b]),
                "sinr_failures": int(c["sinr_failures"][p, b]),
                "cca_aborts": int(c["cca_aborts"][p, b]),
                "hyb_rejections": int(c["hyb_rejections"][p, b]),
                "p_fail": pf_m,
                "p_fail_ci95": pf_h,
                "abort_rate": ab_m,
                "energy_j": float(energy[p, b]),
                "delivered_bits": int(c["delivered_bits"][p, b]),
                "efficiency_bit_per_j": ef_m,
                "efficiency_ci95": ef_h,
                "throughput_bit_per_s": tp_m,
                "throughput_ci95": tp_h,
            })
    return rows


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([format_value(row[k]) for k in CSV_HEADER])
