"""EWMA SINR estimation and outage-constrained rate selection."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(slots=True)
class SinrEstimator:
    alpha: float
    estimate: float = 0.0
    initialized: bool = False

    def update(self, measured: float) -> SinrEstimator:
        """Fold one linear SINR measurement into the moving average.

        The first measurement seeds the estimate directly.
        """
        if measured < 0:
            raise ValueError("measured SINR must be >= 0")
        if self.initialized:
            self.estimate = (1.0 - self.alpha) * self.estimate + self.alpha * measured
        else:
            self.estimate = measured
            self.initialized = True
        return self


def update(est: SinrEstimator, measured: float) -> SinrEstimator:
    return est.update(measured)


def outage_probability(threshold: float, mean_sinr: float) -> float:
    """P(h * mean_sinr < threshold) for unit-mean exponential h."""
    if mean_sinr <= 0:
        return 1.0
    return -math.expm1(-threshold / mean_sinr)


def select_rate(estimate: float, rates, p_star: float, bw: float) -> float:
    """Highest rate whose Rayleigh outage at the estimated SINR stays within p_star.

    Falls back to the lowest rate when none qualifies.
    """
    thresholds = [2.0 ** (r / bw) - 1.0 for r in rates]
    return rates[select_index(estimate, thresholds, p_star)]


def select_index(estimate: float, thresholds, p_star: float) -> int:
    """Index of the largest ascending threshold meeting the outage target, else 0."""
    bound = -math.log1p(-p_star) * estimate
    best = 0
    for i, th in enumerate(thresholds):
        if th > bound:
            break
        best = i
    return best


def measure_feedback(est: SinrEstimator | None, measured: float) -> None:
    """Deliver the gateway's SINR reading to the source node, ideal and instantaneous."""
    if est is not None:
        est.update(measured)


def current_rate(est: SinrEstimator | None, rates, p_star: float, bw: float) -> float:
    """Rate a node transmits at: basic until the estimator has a first reading."""
    if est is None or not est.initialized:
        return rates[0]
    return select_rate(est.estimate, rates, p_star, bw)
