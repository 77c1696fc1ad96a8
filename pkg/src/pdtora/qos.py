"""Query admission for the power/delay extension, NTT estimation and path
metric composition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import reduce
from typing import Iterable, Optional, Sequence, Union


@dataclass(frozen=True)
class QosConstraint:
    min_power_fraction: float = 0.2
    max_delay_ms: float = 250.0

    def __post_init__(self):
        if not (math.isfinite(self.min_power_fraction) and math.isfinite(self.max_delay_ms)):
            raise ValueError("QoS bounds must be finite")
        if not 0.0 <= self.min_power_fraction <= 1.0:
            raise ValueError(f"min_power_fraction out of [0, 1]: {self.min_power_fraction}")
        if self.max_delay_ms < 0:
            raise ValueError(f"max_delay_ms must be >= 0: {self.max_delay_ms}")


@dataclass(frozen=True)
class Admit:
    remaining_budget_ms: float


class Reject(Enum):
    POWER = "PowerReject"
    DELAY = "DelayReject"


AdmissionResult = Union[Admit, Reject]


def admit_query(
    residual_fraction: float,
    budget_ms: float,
    ntt_ms: float,
    qos: QosConstraint,
    est_delay_to_dst_ms: Optional[float] = None,
) -> AdmissionResult:
    """Per-hop admission of a query.

    A node whose residual fraction equals the threshold is admitted; only a
    strictly lower level drops the query.
    """
    if residual_fraction < qos.min_power_fraction:
        return Reject.POWER
    if est_delay_to_dst_ms is not None and est_delay_to_dst_ms > budget_ms:
        return Reject.DELAY
    if ntt_ms > budget_ms:
        return Reject.DELAY
    return Admit(budget_ms - ntt_ms)


class NttEstimator:
    """EWMA of observed per-packet node delays, seeded with the static NTT."""

    def __init__(self, static_ms: float, alpha: float = 0.5):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1]: {alpha}")
        self.alpha = alpha
        self.value = float(static_ms)

    def observe(self, delay_ms: float) -> float:
        self.value += self.alpha * (delay_ms - self.value)
        return self.value


def estimate_ntt(observed: Iterable[float], alpha: float, static_ms: float = 10.0) -> float:
    est = NttEstimator(static_ms, alpha)
    for d in observed:
        if d < 0:
            raise ValueError(f"negative delay sample: {d}")
        est.observe(d)
    return est.value


class MetricKind(Enum):
    ADDITIVE = "additive"
    CONCAVE = "concave"
    MULTIPLICATIVE = "multiplicative"


def compose_metric(kind: MetricKind, per_link_values: Sequence[float]) -> float:
    if len(per_link_values) == 0:
        raise ValueError("cannot compose a metric over an empty path")
    if kind is MetricKind.ADDITIVE:
        return sum(per_link_values)
    if kind is MetricKind.CONCAVE:
        return min(per_link_values)
    return reduce(lambda a, b: a * b, per_link_values)
