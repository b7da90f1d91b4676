"""Hypothesis tests on trial streams.

* passive locality: outcome factorization within each source-record stratum
* active locality: the A marginal does not move with the remote setting
* the cyclic Bell statistic with standard errors
* exact anti-correlation at equal settings
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .samplers import TrialBatch, as_batch

DEFAULT_THRESHOLD = 4.0
MIN_STRATUM = 1_000
MIN_BELL_TRIALS = 10_000
MIN_SIGNALING_TRIALS = 10_000


class InsufficientDataError(ValueError):
    """A test was handed fewer trials than it needs."""


class Decision(str, enum.Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


@dataclass(frozen=True)
class TestReport:
    test_name: str
    statistic: float
    z_score: float
    n: int
    decision: Decision
    threshold: float
    details: dict = field(default_factory=dict, compare=False)

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if (self.decision is Decision.REJECT) != (abs(self.z_score) > self.threshold):
            raise ValueError("decision inconsistent with z score and threshold")

    @classmethod
    def decide(cls, test_name: str, statistic: float, z_score: float, n: int,
               threshold: float, **details) -> "TestReport":
        decision = Decision.REJECT if abs(z_score) > threshold else Decision.ACCEPT
        return cls(test_name, float(statistic), float(z_score), int(n), decision,
                   float(threshold), details)

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decision"] = self.decision.value
        for key in ("statistic", "z_score"):
            if not math.isfinite(d[key]):
                d[key] = str(d[key])
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _ratio(num: float, se: float) -> float:
    if se > 0.0:
        return num / se
    # a zero null-variance means a degenerate marginal; then num is exactly 0 up to rounding
    return 0.0 if abs(num) < 1e-12 else math.copysign(math.inf, num)


def passive_locality_test(trials, threshold: float = DEFAULT_THRESHOLD,
                          min_stratum: int = MIN_STRATUM) -> TestReport:
    """Factorization of the joint outcome given the source record.

    Per stratum ``D = P(A=UP, B=UP) - P(A=UP) P(B=UP)``. Strata are
    combined with weights ``n_s / n``; the standard error is the
    delta-method one evaluated under the null of factorization,
    ``sqrt(pA (1-pA) pB (1-pB) / n_s)`` per stratum. REJECT means
    passive locality is violated.
    """
    batch = as_batch(trials)
    batch.axis_pair()
    n = len(batch)
    combined, var = 0.0, 0.0
    strata = {}
    for spin in (1, -1):
        mask = batch.source_1 == spin
        n_s = int(mask.sum())
        if n_s == 0:
            continue
        if n_s < min_stratum:
            raise InsufficientDataError(
                f"source stratum {spin:+d} has {n_s} trials; need at least {min_stratum}")
        a_up = batch.outcome_a[mask] > 0
        b_up = batch.outcome_b[mask] > 0
        p_ab = np.count_nonzero(a_up & b_up) / n_s
        p_a = np.count_nonzero(a_up) / n_s
        p_b = np.count_nonzero(b_up) / n_s
        delta = p_ab - p_a * p_b
        var_s = p_a * (1 - p_a) * p_b * (1 - p_b) / n_s
        w = n_s / n
        combined += w * delta
        var += w * w * var_s
        strata[f"{spin:+d}"] = {"n": n_s, "p_ab": p_ab, "p_a": p_a, "p_b": p_b, "delta": delta,
                                "z": _ratio(delta, math.sqrt(var_s))}
    z = _ratio(combined, math.sqrt(var))
    return TestReport.decide("passive_locality", combined, z, n, threshold, strata=strata)


def no_signaling_test(trials_b1, trials_b2, threshold: float = DEFAULT_THRESHOLD,
                      min_trials: int = MIN_SIGNALING_TRIALS) -> TestReport:
    """Two-sample z test of ``P(A=UP)`` under two remote settings."""
    b1, b2 = as_batch(trials_b1), as_batch(trials_b2)
    a1, s1 = b1.axis_pair()
    a2, s2 = b2.axis_pair()
    if a1 != a2:
        raise ValueError("both trial lists must share the station-A setting")
    if s1 == s2:
        raise ValueError("the station-B settings must differ")
    n1, n2 = len(b1), len(b2)
    if min(n1, n2) < min_trials:
        raise InsufficientDataError(f"need at least {min_trials} trials per setting, got {n1} and {n2}")
    x1 = np.count_nonzero(b1.outcome_a > 0)
    x2 = np.count_nonzero(b2.outcome_a > 0)
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    diff = p1 - p2
    return TestReport.decide("no_signaling", diff, _ratio(diff, se), n1 + n2, threshold,
                             p_a_given_b1=p1, p_a_given_b2=p2, se=se,
                             theta_b1=s1.theta, theta_b2=s2.theta)


@dataclass(frozen=True)
class BellEstimate:
    estimates: tuple[float, float, float]
    standard_errors: tuple[float, float, float]
    sum: float
    sum_se: float
    violates: bool
    n: tuple[int, int, int] = (0, 0, 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("estimates", "standard_errors", "n"):
            d[key] = list(d[key])
        return d


def bell_statistic(trials_ab, trials_bc, trials_ca,
                   min_trials: int = MIN_BELL_TRIALS) -> BellEstimate:
    """Cyclic sum of ``P(A=UP, B=UP)`` over (a,b), (b,c), (c,a).

    Violation is declared when the sum exceeds 1 by more than three
    standard errors.
    """
    batches = [as_batch(t) for t in (trials_ab, trials_bc, trials_ca)]
    pairs = [b.axis_pair() for b in batches]
    for (x, y), (nx, _) in zip(pairs, pairs[1:] + pairs[:1]):
        if y != nx:
            raise ValueError("axis pairs are not cyclic (a,b), (b,c), (c,a)")
    est, ses, ns = [], [], []
    for b in batches:
        n = len(b)
        if n < min_trials:
            raise InsufficientDataError(f"need at least {min_trials} trials per pair, got {n}")
        p = np.count_nonzero((b.outcome_a > 0) & (b.outcome_b > 0)) / n
        est.append(p)
        ses.append(math.sqrt(p * (1 - p) / n))
        ns.append(n)
    total = math.fsum(est)
    total_se = math.sqrt(math.fsum(s * s for s in ses))
    return BellEstimate(tuple(est), tuple(ses), total, total_se, total - 3 * total_se > 1, tuple(ns))


def anticorrelation_check(trials) -> TestReport:
    """Count equal-outcome trials at equal settings; any such trial rejects."""
    batch = as_batch(trials)
    if np.any(batch.theta_a != batch.theta_b):
        raise ValueError("anti-correlation check needs equal settings at both stations")
    equal = int(np.count_nonzero(batch.outcome_a == batch.outcome_b))
    # z carries the count itself so that REJECT <=> count > 0
    return TestReport.decide("anticorrelation", equal, equal, len(batch), 0.0)
