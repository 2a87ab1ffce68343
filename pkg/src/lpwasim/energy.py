"""Per-node energy accounting and the bits-per-joule efficiency metric."""

from __future__ import annotations

import csv
from dataclasses import dataclass


@dataclass(slots=True)
class EnergyLedger:
    tx: float = 0.0
    cca: float = 0.0
    rx: float = 0.0

    @property
    def total(self) -> float:
        return self.tx + self.cca + self.rx


def tx_energy(rate: float, length: float, p_circuit: float, p_radiated: float) -> float:
    """Energy of one transmission: circuit plus radiated power over the airtime."""
    if rate <= 0:
        raise ValueError("rate must be > 0")
    return (p_circuit + p_radiated) * length / rate


def cca_energy(config, etsi: bool = False) -> float:
    """Energy debited for a single clear-channel assessment."""
    return config.e_sense_etsi if etsi else config.e_sense


def rx_energy(duration: float, p_rx: float) -> float:
    if duration < 0:
        raise ValueError("duration must be >= 0")
    return p_rx * duration


def efficiency(delivered_bits: float, total_energy: float) -> float | None:
    """Delivered bits per joule, or None for a node that spent nothing."""
    if total_energy <= 0:
        return None
    return delivered_bits / total_energy


NODE_ENERGY_HEADER = ["uid", "protocol", "x_m", "y_m", "distance_m", "tx_j", "cca_j", "rx_j",
                      "total_j", "delivered_bits"]


def write_node_energy_csv(path, nodes, packet_bits: int) -> None:
    """Dump the per-node energy breakdown, one row per node."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NODE_ENERGY_HEADER)
        for n in nodes:
            e = n.energy
            w.writerow([n.uid, n.kind.value, repr(n.x), repr(n.y), repr(n.distance_to_gw),
                        repr(e.tx), repr(e.cca), repr(e.rx), repr(e.total),
                        n.delivered_packets * packet_bits])
