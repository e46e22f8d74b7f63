"""Binomial tail machinery and the error probabilities of the two ratio tests.

The ACK ratio test (private signals) and the idle slot ratio test (public
signals) both fail when a binomial count falls at or below
``floor(L * (expected_rate - B))``. Everything here is a pure function of
its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .game import NetworkConfig

__all__ = [
    "binom_cdf",
    "binom_pmf",
    "failing_count",
    "AckTestConfig",
    "IdleTestConfig",
    "ErrorProbabilities",
    "ack_error_probs",
    "idle_error_probs",
    "chebyshev_pf_bound",
    "BETA_SWITCH_N",
]

# Above this many trials the CDF goes through the regularized incomplete beta.
BETA_SWITCH_N = 10_000

# Relative slack applied before flooring L * level, so an exact-integer level
# that lands one ulp low in floating point still counts as failing.
_FLOOR_SLACK = 1e-12


def _check_trials(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ValueError(f"n must be a non-negative integer, got {n!r}")
    return int(n)


def _check_p(p) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    return p


def _log_pmf_terms(k: int, n: int, p: float) -> np.ndarray:
    m = np.arange(k + 1, dtype=float)
    log_comb = special.gammaln(n + 1.0) - special.gammaln(m + 1.0) - special.gammaln(n - m + 1.0)
    return log_comb + m * math.log(p) + (n - m) * math.log1p(-p)


def binom_cdf(y: float, n: int, p: float, *, method: str = "auto") -> float:
    """F(y; n, p) = sum_{m=0}^{floor(y)} C(n, m) p^m (1-p)^(n-m).

    ``method`` is ``"sum"`` (log-space pmf terms, compensated summation),
    ``"beta"`` (regularized incomplete beta) or ``"auto"``, which sums for
    n <= BETA_SWITCH_N and uses the beta identity above.
    """
    n = _check_trials(n)
    p = _check_p(p)
    if not math.isfinite(y):
        if math.isnan(y):
            raise ValueError("y must not be NaN")
        return 0.0 if y < 0 else 1.0
    k = math.floor(y)
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0
    if method == "auto":
        method = "sum" if n <= BETA_SWITCH_N else "beta"
    if method == "beta":
        value = float(special.betainc(n - k, k + 1, 1.0 - p))
    elif method == "sum":
        value = math.fsum(np.exp(_log_pmf_terms(k, n, p)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return min(1.0, max(0.0, value))


def binom_pmf(k: int, n: int, p: float) -> float:
    n = _check_trials(n)
    p = _check_p(p)
    if k < 0 or k > n:
        return 0.0
    if p in (0.0, 1.0):
        return float(k == (n if p == 1.0 else 0))
    return math.exp(_log_pmf_terms(k, n, p)[-1])


def failing_count(review_len: int, level: float) -> int:
    """Largest count that fails a ratio test with threshold ``level``.

    A review of ``review_len`` slots fails iff its count is at most
    ``floor(review_len * level)``; -1 means no count fails.
    """
    x = review_len * level
    return math.floor(x + _FLOOR_SLACK * max(1.0, abs(x)))


@dataclass(frozen=True)
class ErrorProbabilities:
    """False-punishment and miss-detection probabilities of one test setting.

    ``expected_rate`` and ``deviant_rate`` are the per-slot probabilities of
    the counted event without and with a deviator (q_c / q_d for the ACK
    test, their idle-slot analogues for the idle test). ``threshold`` is the
    largest failing count and ``per_node_fail`` the single-node failure
    probability under compliance. ``detection`` is 1 - miss_detection
    computed without cancellation; when absent it is derived by subtraction.
    """

    false_punishment: float
    miss_detection: Optional[float]
    expected_rate: float
    deviant_rate: Optional[float]
    threshold: int
    per_node_fail: float
    detection: Optional[float] = None

    @property
    def detection_prob(self) -> Optional[float]:
        if self.detection is not None:
            return self.detection
        return None if self.miss_detection is None else 1.0 - self.miss_detection


def _check_margin(margin: float, upper: float, what: str) -> None:
    if not 0.0 < margin < upper:
        raise ValueError(f"margin B must lie in (0, {what}={upper:.12g}), got {margin!r}")


def _check_review_len(review_len) -> int:
    if isinstance(review_len, bool) or int(review_len) != review_len or review_len < 1:
        raise ValueError(f"review_len must be a positive integer, got {review_len!r}")
    return int(review_len)


@dataclass(frozen=True)
class AckTestConfig:
    margin: float
    review_len: int
    n_nodes: int = 5
    deviation_prob: Optional[float] = None
    cooperation_prob: Optional[float] = None

    def __post_init__(self):
        net = NetworkConfig(self.n_nodes, self.cooperation_prob)
        object.__setattr__(self, "cooperation_prob", net.cooperation_prob)
        object.__setattr__(self, "review_len", _check_review_len(self.review_len))
        _check_margin(self.margin, self.q_c, "q_c")
        if self.deviation_prob is not None and not net.p_c < self.deviation_prob <= 1.0:
            raise ValueError(f"deviation_prob must lie in (p_c, 1], got {self.deviation_prob!r}")

    @property
    def q_c(self) -> float:
        p = self.cooperation_prob
        return p * (1.0 - p) ** (self.n_nodes - 1)

    @property
    def q_d(self) -> Optional[float]:
        """ACK rate of a compliant node when one other node transmits at p_d."""
        if self.deviation_prob is None:
            return None
        p = self.cooperation_prob
        return p * (1.0 - p) ** (self.n_nodes - 2) * (1.0 - self.deviation_prob)


@dataclass(frozen=True)
class IdleTestConfig:
    margin: float
    review_len: int
    n_nodes: int = 5
    deviation_prob: Optional[float] = None
    cooperation_prob: Optional[float] = None

    def __post_init__(self):
        net = NetworkConfig(self.n_nodes, self.cooperation_prob)
        object.__setattr__(self, "cooperation_prob", net.cooperation_prob)
        object.__setattr__(self, "review_len", _check_review_len(self.review_len))
        _check_margin(self.margin, self.q_c, "idle rate")
        if self.deviation_prob is not None and not net.p_c < self.deviation_prob <= 1.0:
            raise ValueError(f"deviation_prob must lie in (p_c, 1], got {self.deviation_prob!r}")

    @property
    def q_c(self) -> float:
        return (1.0 - self.cooperation_prob) ** self.n_nodes

    @property
    def q_d(self) -> Optional[float]:
        if self.deviation_prob is None:
            return None
        return (1.0 - self.deviation_prob) * (1.0 - self.cooperation_prob) ** (self.n_nodes - 1)


def ack_error_probs(cfg: AckTestConfig) -> ErrorProbabilities:
    L, N = cfg.review_len, cfg.n_nodes
    t = failing_count(L, cfg.q_c - cfg.margin)
    node_fail = binom_cdf(t, L, cfg.q_c)
    pf = 1.0 - (1.0 - node_fail) ** N
    pm = caught = None
    if cfg.deviation_prob is not None:
        dev_fail = binom_cdf(t, L, cfg.q_d)
        pm = (1.0 - dev_fail) ** (N - 1)
        caught = -math.expm1((N - 1) * math.log1p(-dev_fail)) if dev_fail < 1.0 else 1.0
    return ErrorProbabilities(pf, pm, cfg.q_c, cfg.q_d, t, node_fail, caught)


def idle_error_probs(cfg: IdleTestConfig) -> ErrorProbabilities:
    L = cfg.review_len
    t = failing_count(L, cfg.q_c - cfg.margin)
    pf = binom_cdf(t, L, cfg.q_c)
    pm = caught = None
    if cfg.deviation_prob is not None:
        caught = binom_cdf(t, L, cfg.q_d)
        pm = 1.0 - caught
    return ErrorProbabilities(pf, pm, cfg.q_c, cfg.q_d, t, pf, caught)


def chebyshev_pf_bound(margin: float, review_len: int, n_nodes: int,
                       cooperation_prob: Optional[float] = None) -> float:
    """Chebyshev bound q(1-q) / (B^2 L) on the idle test's false punishment.

    Not clamped; callers that need a probability take ``min(1, ...)``.
    """
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin!r}")
    review_len = _check_review_len(review_len)
    q = NetworkConfig(n_nodes, cooperation_prob).idle_prob
    return q * (1.0 - q) / (margin * margin * review_len)
