"""Review strategies driven by public ternary feedback (idle/success/collision).

All nodes see the same channel outcome, so they agree on the test result:
a passed review is followed immediately by the next review, a failed one by
``M`` slots of punishment. An epoch is one review plus its punishment, if
any, and payoffs are epoch (renewal) averages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._deterrence import deterrence_balance, shortest_deterrent
from .game import NetworkConfig
from .stats import (
    ErrorProbabilities,
    IdleTestConfig,
    chebyshev_pf_bound,
    failing_count,
    idle_error_probs,
)

__all__ = [
    "PublicReviewProtocol",
    "PublicAnalysis",
    "EpsNeSchedule",
    "BestResponse",
    "analyze_public",
    "public_error_probs",
    "public_state_count",
    "deviation_payoff_upper_bound",
    "eps_ne_lower_bounds",
    "construct_eps_ne",
    "best_response_public",
    "best_response_value_public",
    "DEFAULT_BR_L_CAP",
]

DEFAULT_BR_L_CAP = 400


@dataclass(frozen=True)
class PublicReviewProtocol:
    margin: float
    review_len: int
    punish_len: int
    n_nodes: int = 5
    cooperation_prob: Optional[float] = None

    def __post_init__(self):
        net = NetworkConfig(self.n_nodes, self.cooperation_prob)
        object.__setattr__(self, "cooperation_prob", net.cooperation_prob)
        for name in ("review_len", "punish_len"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 0.0 < self.margin < net.idle_prob:
            raise ValueError(
                f"margin must lie in (0, idle rate={net.idle_prob:.12g}), got {self.margin!r}")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(self.n_nodes, self.cooperation_prob)

    @property
    def idle_rate(self) -> float:
        return self.network.idle_prob

    @property
    def threshold(self) -> int:
        """Largest idle count in a review that triggers punishment."""
        return failing_count(self.review_len, self.idle_rate - self.margin)

    def with_punish_len(self, punish_len: int) -> "PublicReviewProtocol":
        return PublicReviewProtocol(self.margin, self.review_len, punish_len,
                                    self.n_nodes, self.cooperation_prob)

    def to_dict(self) -> dict:
        return {"B": self.margin, "L": self.review_len, "M": self.punish_len,
                "N": self.n_nodes, "p_c": self.cooperation_prob}


def public_state_count(proto: PublicReviewProtocol) -> int:
    """Automaton size with saturated idle counts: kL - k(k-1)/2 + M."""
    k = proto.threshold + 2
    return k * proto.review_len - k * (k - 1) // 2 + proto.punish_len


@dataclass(frozen=True)
class PublicAnalysis:
    protocol: PublicReviewProtocol
    p_d: float
    errors: ErrorProbabilities
    payoff_compliant: float
    payoff_deviator: float
    deviation_gain: float
    g: float
    m_min: float
    efficiency_loss: float
    is_dp: bool

    @property
    def m_min_ceil(self) -> int:
        proto = self.protocol
        return shortest_deterrent(self.p_d, proto.cooperation_prob, proto.review_len, self.g)

    def to_dict(self) -> dict:
        return {
            "signal": "public",
            "protocol": self.protocol.to_dict(),
            "p_d": self.p_d,
            "false_punishment": self.errors.false_punishment,
            "miss_detection": self.errors.miss_detection,
            "q_c": self.errors.expected_rate,
            "q_d": self.errors.deviant_rate,
            "threshold": self.errors.threshold,
            "payoff_compliant": self.payoff_compliant,
            "payoff_deviator": self.payoff_deviator,
            "deviation_gain": self.deviation_gain,
            "g": self.g,
            "m_min": self.m_min if math.isfinite(self.m_min) else None,
            "m_min_ceil": self.m_min_ceil,
            "efficiency_loss": self.efficiency_loss,
            "is_dp": self.is_dp,
        }


def public_error_probs(margin, review_len, p_d, net: NetworkConfig) -> ErrorProbabilities:
    return idle_error_probs(IdleTestConfig(margin, review_len, net.n_nodes, p_d, net.cooperation_prob))


def analyze_public(proto: PublicReviewProtocol, p_d: float,
                   errors: Optional[ErrorProbabilities] = None) -> PublicAnalysis:
    """Epoch-average payoffs and the DP verdict against a review-phase deviator.

    The deviator transmits with p_d during reviews; what it does while being
    punished earns nothing and does not enter the payoffs. ``errors``
    overrides the idle-test error probabilities.
    """
    net = proto.network
    p_c, N = net.p_c, net.n_nodes
    if not p_c < p_d <= 1.0:
        raise ValueError(f"p_d must lie in (p_c={p_c:.12g}, 1], got {p_d!r}")
    if errors is None:
        errors = public_error_probs(proto.margin, proto.review_len, p_d, net)
    pf, caught = errors.false_punishment, errors.detection_prob
    L, M = proto.review_len, proto.punish_len
    tail = (1.0 - p_c) ** (N - 1)
    q_c = p_c * tail
    q_dev = p_d * tail
    epoch_c = L + pf * M
    epoch_d = L + caught * M
    g = p_c * caught - p_d * pf
    m_min = (p_d - p_c) * L / g if g > 0 else math.inf
    balance = deterrence_balance(p_d, p_c, L, g, M)
    return PublicAnalysis(
        protocol=proto,
        p_d=p_d,
        errors=errors,
        payoff_compliant=L * q_c / epoch_c,
        payoff_deviator=L * q_dev / epoch_d,
        # same value as payoff_deviator - payoff_compliant, with the sign
        # carried by the (p_d - p_c) L - g M factor
        deviation_gain=L * tail * balance / (epoch_c * epoch_d),
        g=g,
        m_min=m_min,
        efficiency_loss=N * pf * M * q_c / epoch_c,
        is_dp=bool(g > 0 and balance <= 0),
    )


def deviation_payoff_upper_bound(proto: PublicReviewProtocol, pf_star: float) -> float:
    """Upper bound on any deviator's payoff given its punishment probability.

    (L q_c + P* (1-p_c)^N L + (1-P*) B L) / (L + P* M)
    """
    if not 0.0 <= pf_star <= 1.0:
        raise ValueError(f"pf_star must lie in [0, 1], got {pf_star!r}")
    net = proto.network
    L, M, B = proto.review_len, proto.punish_len, proto.margin
    numerator = L * net.q_c + pf_star * net.idle_prob * L + (1.0 - pf_star) * B * L
    return numerator / (L + pf_star * M)


@dataclass(frozen=True)
class EpsNeSchedule:
    """Ties margin and punishment length to L: B = beta L^(rho-1), M = ceil(mu L)."""

    beta: float
    rho: float
    mu: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if not 0.5 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (1/2, 1), got {self.rho!r}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu!r}")

    def validate_for(self, n_nodes: int) -> None:
        if not self.mu > n_nodes - 1:
            raise ValueError(f"mu must exceed N-1={n_nodes - 1}, got {self.mu!r}")

    def margin(self, review_len: int) -> float:
        return self.beta * review_len ** (self.rho - 1.0)

    def punish_len(self, review_len: int) -> int:
        return math.ceil(self.mu * review_len)


def _chebyshev_loss(L: int, sched: EpsNeSchedule, net: NetworkConfig) -> float:
    pf_bar = min(1.0, chebyshev_pf_bound(sched.margin(L), L, net.n_nodes, net.p_c))
    x = pf_bar * sched.mu
    return net.n_nodes * x * net.q_c / (1.0 + x)


def _smallest_l_below(target: float, sched: EpsNeSchedule, net: NetworkConfig) -> int:
    """Smallest L with the Chebyshev-bounded loss at most ``target``."""
    if _chebyshev_loss(1, sched, net) <= target:
        return 1
    hi = 2
    while _chebyshev_loss(hi, sched, net) > target:
        hi *= 2
    lo = hi // 2  # loss(lo) > target
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _chebyshev_loss(mid, sched, net) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def eps_ne_lower_bounds(epsilon: float, delta: float, sched: EpsNeSchedule,
                        cfg: NetworkConfig = NetworkConfig()) -> dict:
    """The three lower bounds on L behind the epsilon-NE construction.

    ``loss_L`` keeps the (Chebyshev-bounded) loss within delta,
    ``shortfall_L`` keeps the compliant payoff within epsilon/2 of q_c and
    ``margin_L`` = (2 beta / epsilon)^(1/(1-rho)) caps the margin at epsilon/2.
    """
    if not epsilon > 0 or not delta > 0:
        raise ValueError("epsilon and delta must be positive")
    sched.validate_for(cfg.n_nodes)
    raw = (2.0 * sched.beta / epsilon) ** (1.0 / (1.0 - sched.rho))
    margin_L = max(1, math.ceil(raw * (1.0 - 1e-12)))
    return {
        "loss_L": _smallest_l_below(delta, sched, cfg),
        "shortfall_L": _smallest_l_below(cfg.n_nodes * epsilon / 2.0, sched, cfg),
        "margin_L": margin_L,
        "margin_L_exact": raw,
    }


def construct_eps_ne(epsilon: float, delta: float, sched: EpsNeSchedule,
                     cfg: NetworkConfig = NetworkConfig()) -> PublicReviewProtocol:
    """epsilon-NE, delta-PO idle-test protocol at the smallest admissible L."""
    bounds = eps_ne_lower_bounds(epsilon, delta, sched, cfg)
    L = max(bounds["loss_L"], bounds["shortfall_L"], bounds["margin_L"])
    return PublicReviewProtocol(sched.margin(L), L, sched.punish_len(L), cfg.n_nodes, cfg.p_c)


@dataclass(frozen=True)
class BestResponse:
    """Optimal deviation against an idle-test protocol.

    ``policy[j, c]`` is 1 when the deviator transmits in review slot ``j``
    having seen ``c`` idle slots so far, with counts above the threshold
    merged into ``c = threshold + 1``.
    """

    value: float
    policy: np.ndarray = field(repr=False)
    threshold: int
    punish_prob: float
    iterations: int

    def action(self, slot: int, idle_count: int) -> int:
        return int(self.policy[slot, min(idle_count, self.policy.shape[1] - 1)])


def _evaluate(policy, s, threshold, L, M):
    """Expected review reward and punishment probability of a policy."""
    K = policy.shape[1] - 1
    reward = np.zeros(K + 1)
    punish = (np.arange(K + 1) <= threshold).astype(float)
    up = np.minimum(np.arange(K + 1) + 1, K)
    for j in range(L - 1, -1, -1):
        a = policy[j]
        reward = np.where(a == 1, s + reward, s * reward[up] + (1.0 - s) * reward)
        punish = np.where(a == 1, punish, s * punish[up] + (1.0 - s) * punish)
    return reward[0], punish[0]


def best_response_public(proto: PublicReviewProtocol, threshold: Optional[int] = None,
                         l_cap: int = DEFAULT_BR_L_CAP, tol: float = 1e-10,
                         max_iter: int = 200) -> BestResponse:
    """Limit-of-means best response to an idle-test protocol.

    The deviator's per-epoch problem is a finite-horizon MDP over (review
    slot, idle count). Its long-run payoff is a ratio of expected review
    reward to expected epoch length, solved by Dinkelbach iteration: for a
    guess v, backward induction maximizes reward - v * length, and v is
    replaced by the ratio of the maximizing policy until it settles.

    Only pure actions are searched. Both the slot reward (p s) and the idle
    probability ((1-p) s) are affine in the transmission probability p, so
    the inner maximization always has a solution at p in {0, 1}.

    ``threshold`` overrides the protocol's failing count (-1: never punish).
    """
    L, M = proto.review_len, proto.punish_len
    if L > l_cap:
        raise ValueError(f"review_len {L} exceeds the dynamic-programming cap {l_cap}")
    net = proto.network
    s = (1.0 - net.p_c) ** (net.n_nodes - 1)
    t = proto.threshold if threshold is None else int(threshold)
    K = max(0, min(t + 1, L))  # idle counts >= K always pass
    counts = np.arange(K + 1)
    up = np.minimum(counts + 1, K)
    terminal_punish = counts <= t

    v = 0.0
    policy = None
    for it in range(1, max_iter + 1):
        w = np.where(terminal_punish, -v * M, 0.0)
        new_policy = np.zeros((L, K + 1), dtype=np.int8)
        for j in range(L - 1, -1, -1):
            q_send = s - v + w
            q_wait = -v + s * w[up] + (1.0 - s) * w
            send = q_send > q_wait
            new_policy[j] = send
            w = np.where(send, q_send, q_wait)
        reward, punish = _evaluate(new_policy, s, t, L, M)
        v_new = reward / (L + M * punish)
        converged = abs(v_new - v) <= tol or (
            policy is not None and np.array_equal(policy, new_policy))
        v, policy = v_new, new_policy
        if converged:
            break
    _, punish = _evaluate(policy, s, t, L, M)
    return BestResponse(float(v), policy, t, float(punish), it)


def best_response_value_public(proto: PublicReviewProtocol, threshold: Optional[int] = None,
                               l_cap: int = DEFAULT_BR_L_CAP) -> float:
    return best_response_public(proto, threshold, l_cap).value
