"""Global no-attack probability from per-region published ratios.

A "global attack" means at least two regions are attacked. The factorised form
needs one product and one sum over regions; the enumeration form sums the
n + 1 no-global-attack scenarios explicitly and exists to check it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidStatisticsError, OracleRangeError

LOG_SPACE_MIN_N = 31
ENUM_MAX_N = 25
DETECTION_THRESHOLD = 0.9


def _validate(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidStatisticsError("xs and ys must be 1-d and of equal length")
    if np.any(~(xs > 0.0)):
        raise InvalidStatisticsError("every x_i must be strictly positive")
    if np.any(~(ys >= 0.0)):
        raise InvalidStatisticsError("every y_i must be non-negative")
    return xs, ys


def no_attack_prob(xs, ys):
    """Pr(at most one region attacked | alarms) = prod(x) * (1 + sum(y))."""
    xs, ys = _validate(xs, ys)
    if len(xs) == 1:
        # x (1 + y) = 1 algebraically; skip the multiply so rounding cannot show through
        return 1.0
    if len(xs) >= LOG_SPACE_MIN_N:
        return math.exp(float(np.sum(np.log(xs))) + math.log1p(float(np.sum(ys))))
    return float(np.prod(xs)) * (1.0 + float(np.sum(ys)))


def no_attack_prob_enum(a_vec, b_vec):
    """Bayes sum over the scenarios with zero or one attacked region.

    Scenario k contributes b_k * prod_{i != k} a_i (k = 0 contributes prod a_i);
    the evidence is prod_i (a_i + b_i) under independent regions.
    """
    a = [float(v) for v in a_vec]
    b = [float(v) for v in b_vec]
    n = len(a)
    if n != len(b):
        raise InvalidStatisticsError("a_vec and b_vec differ in length")
    if n > ENUM_MAX_N:
        raise OracleRangeError(f"enumeration oracle limited to n <= {ENUM_MAX_N}, got {n}")
    if any(v <= 0.0 for v in a) or any(v < 0.0 for v in b):
        raise InvalidStatisticsError("need a_i > 0 and b_i >= 0")
    total = 0.0
    for k in range(n + 1):
        term = 1.0
        for i in range(n):
            term *= b[i] if i == k - 1 else a[i]
        total += term
    evidence = 1.0
    for i in range(n):
        evidence *= a[i] + b[i]
    return total / evidence


def global_attack_prob(report):
    p = report.p_no_attack if isinstance(report, GlobalReport) else float(report)
    return min(max(1.0 - p, 0.0), 1.0)


@dataclass(frozen=True)
class GlobalReport:
    n: int
    xs: tuple
    ys: tuple
    p_no_attack: float
    p_attack: float

    @classmethod
    def from_stats(cls, xs, ys):
        p = min(no_attack_prob(xs, ys), 1.0)
        return cls(len(xs), tuple(float(v) for v in xs), tuple(float(v) for v in ys), p, 1.0 - p)

    def detected(self, threshold=DETECTION_THRESHOLD):
        return self.p_attack >= threshold
