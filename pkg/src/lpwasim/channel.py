"""Propagation, fading, link budget and the Shannon decoding threshold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinkSample:
    pathgain: float
    fading: float
    p_rx: float


def path_gain(d, A: float, beta: float):
    """Distance-decay gain ``(A d)^-beta``; accepts scalars or arrays."""
    if np.ndim(d) == 0:
        if not d > 0:
            raise ValueError(f"distance must be > 0, got {d!r}")
        return (A * d) ** -beta
    d = np.asarray(d, dtype=float)
    if not np.all(d > 0):
        raise ValueError("distances must be > 0")
    return (A * d) ** -beta


def sample_fading(rng: np.random.Generator, size=None):
    """Rayleigh power fading: unit-mean exponential."""
    return rng.standard_exponential(size)


def sample_link(p_tx: float, d: float, A: float, beta: float, rng: np.random.Generator) -> LinkSample:
    g = path_gain(d, A, beta)
    h = float(sample_fading(rng))
    return LinkSample(g, h, p_tx * g * h)


def sinr_threshold(r: float, w: float) -> float:
    return 2.0 ** (r / w) - 1.0


def noise_power(n0: float, bw: float) -> float:
    return n0 * bw


def sensitivity(config, rate: float) -> float:
    """Minimum received power that closes a noise-only link at ``rate``."""
    return noise_power(config.n0, config.bw) * sinr_threshold(rate, config.bw)


def coverage_radius(p_tx: float, A: float, beta: float, n0: float, bw: float, rate: float) -> float:
    """Largest distance at which ``rate`` closes with the fading at its mean."""
    floor = noise_power(n0, bw) * sinr_threshold(rate, bw)
    return (p_tx / floor) ** (1.0 / beta) / A


def max_coverage_radius(config) -> float:
    if config.coverage_radius is not None:
        return config.coverage_radius
    return coverage_radius(config.p_tx, config.A, config.beta, config.n0, config.bw,
                           config.basic_rate)


def compute_sinr(signal_energy: float, noise_energy: float, interference_energy: float) -> float:
    return signal_energy / (noise_energy + interference_energy)
