"""Review strategies driven by private ACK signals.

Every node reviews its own ACK count for ``L`` slots, then spends ``M``
slots cooperating (test passed) or punishing by always transmitting (test
failed). The deviator considered here transmits with a constant
probability p_d in every slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

import numpy as np

from ._deterrence import deterrence_balance, shortest_deterrent
from .exceptions import CapExhaustedError
from .game import NetworkConfig, pareto_payoff
from .stats import AckTestConfig, ErrorProbabilities, ack_error_probs, failing_count

__all__ = [
    "PrivateReviewProtocol",
    "PrivateAnalysis",
    "ConstructionResult",
    "RobustConstruction",
    "analyze_private",
    "private_error_probs",
    "state_count",
    "construct_near_optimal_private",
    "construct_robust_eps_dp",
    "robust_deviation_threshold",
    "DEFAULT_L_CAP",
    "DEFAULT_ROBUST_L_CAP",
]

DEFAULT_L_CAP = 5000
DEFAULT_ROBUST_L_CAP = 50_000


@dataclass(frozen=True)
class PrivateReviewProtocol:
    margin: float
    review_len: int
    recip_len: int
    n_nodes: int = 5
    cooperation_prob: Optional[float] = None

    def __post_init__(self):
        net = NetworkConfig(self.n_nodes, self.cooperation_prob)
        object.__setattr__(self, "cooperation_prob", net.cooperation_prob)
        for name in ("review_len", "recip_len"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 0.0 < self.margin < net.q_c:
            raise ValueError(f"margin must lie in (0, q_c={net.q_c:.12g}), got {self.margin!r}")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(self.n_nodes, self.cooperation_prob)

    @property
    def q_c(self) -> float:
        return self.network.q_c

    @property
    def threshold(self) -> int:
        """Largest ACK count in a review that fails the test."""
        return failing_count(self.review_len, self.q_c - self.margin)

    def with_recip_len(self, recip_len: int) -> "PrivateReviewProtocol":
        return PrivateReviewProtocol(self.margin, self.review_len, recip_len,
                                     self.n_nodes, self.cooperation_prob)

    def to_dict(self) -> dict:
        return {"B": self.margin, "L": self.review_len, "M": self.recip_len,
                "N": self.n_nodes, "p_c": self.cooperation_prob}


@dataclass(frozen=True)
class PrivateAnalysis:
    protocol: PrivateReviewProtocol
    p_d: float
    errors: ErrorProbabilities
    payoff_compliant: float
    payoff_deviator: float
    deviation_gain: float
    g: float
    m_min: float
    efficiency_loss: float
    is_dp: bool
    pc_is_optimal: bool

    @property
    def m_min_ceil(self) -> int:
        """Shortest DP reciprocation phase, 0 when no M works."""
        proto = self.protocol
        return shortest_deterrent(self.p_d, proto.cooperation_prob, proto.review_len, self.g)

    def to_dict(self) -> dict:
        return {
            "signal": "private",
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
            "pc_is_optimal": self.pc_is_optimal,
        }


def private_error_probs(margin, review_len, p_d, net: NetworkConfig) -> ErrorProbabilities:
    return ack_error_probs(AckTestConfig(margin, review_len, net.n_nodes, p_d, net.cooperation_prob))


def _dp_margin(pf: float, pm: float, p_d: float, n: int, p_c: float) -> float:
    # g = (1-Pf)^((N-1)/N) - (1-p_c)(1-Pf) - p_d Pm
    keep = 1.0 - pf
    return keep ** ((n - 1) / n) - (1.0 - p_c) * keep - p_d * pm


def _punishment_cost(pf: float, n: int, p_c: float) -> float:
    """p_c Pf - (1-Pf)^((N-1)/N) + (1-Pf), accurate for small Pf.

    With x = -log(1-Pf)/N this is p_c + (1-p_c) e^(-Nx) - e^(-(N-1)x). At
    p_c = 1/N the first-order terms cancel, so small x goes through the
    Taylor series instead of the closed form.
    """
    if pf >= 1.0:
        return p_c
    x = -math.log1p(-pf) / n
    if n * x >= 0.1:
        return (1.0 - p_c) * math.expm1(-n * x) - math.expm1(-(n - 1) * x)
    terms = [float(Fraction(p_c) * n - 1) * x]  # exact: cancels to 0 at p_c = 1/N
    power, fact = x, 1.0
    for k in range(2, 30):
        power *= x
        fact *= k
        coeff = (1.0 - p_c) * (-n) ** k - (-(n - 1)) ** k
        terms.append(coeff * power / fact)
    return math.fsum(terms)


def _loss(pf: float, L: int, M: int, n: int, p_c: float) -> float:
    return n * M / (L + M) * (1.0 - p_c) ** (n - 1) * _punishment_cost(pf, n, p_c)


def _m_min(p_d, p_c, L, g) -> float:
    return (p_d - p_c) * L / g if g > 0 else math.inf


def analyze_private(proto: PrivateReviewProtocol, p_d: float,
                    errors: Optional[ErrorProbabilities] = None) -> PrivateAnalysis:
    """Payoffs, deviation gain and DP verdict against a constant p_d deviator.

    ``errors`` overrides the ACK-test error probabilities, which lets callers
    study idealized tests (e.g. P_f = P_m = 0).

    The efficiency loss is N q_c minus the system payoff, which is the
    Pareto-based definition whenever p_c = 1/N.
    """
    net = proto.network
    p_c, N = net.p_c, net.n_nodes
    if not p_c < p_d <= 1.0:
        raise ValueError(f"p_d must lie in (p_c={p_c:.12g}, 1], got {p_d!r}")
    if errors is None:
        errors = private_error_probs(proto.margin, proto.review_len, p_d, net)
    pf, pm = errors.false_punishment, errors.miss_detection
    L, M = proto.review_len, proto.recip_len
    tail = (1.0 - p_c) ** (N - 1)
    keep = 1.0 - pf

    lone_punisher = keep ** ((N - 1) / N) * (1.0 - keep ** (1.0 / N))
    compliant = tail / (L + M) * (p_c * L + p_c * keep * M + lone_punisher * M)
    deviator = p_d * tail / (L + M) * (L + pm * M)
    g = _dp_margin(pf, pm, p_d, N, p_c)
    balance = deterrence_balance(p_d, p_c, L, g, M)
    gain = tail / (L + M) * balance
    m_min = _m_min(p_d, p_c, L, g)
    return PrivateAnalysis(
        protocol=proto,
        p_d=p_d,
        errors=errors,
        payoff_compliant=compliant,
        payoff_deviator=deviator,
        deviation_gain=gain,
        g=g,
        m_min=m_min,
        efficiency_loss=_loss(pf, L, M, N, p_c),
        is_dp=bool(g > 0 and balance <= 0),
        pc_is_optimal=net.pc_is_optimal,
    )


def state_count(proto: PrivateReviewProtocol, return_k: bool = False):
    """Number of automaton states, kL - k(k-1)/2 + 2M.

    ``k`` is the integer with k - 2 <= L(q_c - B) < k - 1, i.e. one more than
    the number of ACK counts the review needs to distinguish.
    """
    k = proto.threshold + 2
    L, M = proto.review_len, proto.recip_len
    n_states = k * L - k * (k - 1) // 2 + 2 * M
    return (n_states, k) if return_k else n_states


class ConstructionResult(NamedTuple):
    protocol: PrivateReviewProtocol
    efficiency_loss: float
    analysis: PrivateAnalysis


def construct_near_optimal_private(p_d: float, delta: float, margin: float,
                                   cfg: NetworkConfig = NetworkConfig(),
                                   l_cap: int = DEFAULT_L_CAP) -> ConstructionResult:
    """Shortest review length whose DP protocol loses at most ``delta``.

    For each L = 1, 2, ..., l_cap the reciprocation length is ceil(M_min).
    Loss curves jump with the floor in the threshold, so the scan is linear.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    if not cfg.p_c < p_d <= 1.0:
        raise ValueError(f"p_d must lie in (p_c, 1], got {p_d!r}")
    if not 0.0 < margin < cfg.q_c:
        raise ValueError(f"margin must lie in (0, q_c={cfg.q_c:.12g}), got {margin!r}")
    best = (math.inf, None)
    for L in range(1, l_cap + 1):
        errors = private_error_probs(margin, L, p_d, cfg)
        g = _dp_margin(errors.false_punishment, errors.miss_detection, p_d, cfg.n_nodes, cfg.p_c)
        if g <= 0:
            continue
        M = shortest_deterrent(p_d, cfg.p_c, L, g)
        loss = _loss(errors.false_punishment, L, M, cfg.n_nodes, cfg.p_c)
        if loss < best[0]:
            best = (loss, L)
        if loss <= delta:
            proto = PrivateReviewProtocol(margin, L, M, cfg.n_nodes, cfg.p_c)
            analysis = analyze_private(proto, p_d, errors)
            return ConstructionResult(proto, analysis.efficiency_loss, analysis)
    raise CapExhaustedError(
        f"no review length <= {l_cap} gives a DP protocol with loss <= {delta}",
        best_loss=best[0] if best[1] is not None else None,
        best_review_len=best[1],
    )


def robust_deviation_threshold(epsilon: float, cfg: NetworkConfig) -> float:
    """p_c + epsilon / (1 - p_c)^(N-1): smallest p_d gaining epsilon per slot."""
    return cfg.p_c + epsilon / (1.0 - cfg.p_c) ** (cfg.n_nodes - 1)


@dataclass(frozen=True)
class RobustConstruction:
    protocol: PrivateReviewProtocol
    p_eps: float
    g_hat: float
    efficiency_loss: float
    worst_gain: float
    worst_gain_p_d: float
    grid: np.ndarray = field(repr=False)
    gains: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "signal": "private",
            "protocol": self.protocol.to_dict(),
            "p_eps": self.p_eps,
            "g_hat": self.g_hat,
            "efficiency_loss": self.efficiency_loss,
            "worst_gain": self.worst_gain,
            "worst_gain_p_d": self.worst_gain_p_d,
            "grid_points": int(self.grid.size),
        }


def _deviation_grid(p_c: float, step: float) -> np.ndarray:
    n = math.ceil((1.0 - p_c) / step - 1e-9)
    grid = p_c + step * np.arange(1, n + 1)
    grid[-1] = 1.0
    return grid


def construct_robust_eps_dp(epsilon: float, delta: float,
                            cfg: NetworkConfig = NetworkConfig(),
                            l_cap: int = DEFAULT_ROBUST_L_CAP,
                            grid_step: float = 1e-3) -> RobustConstruction:
    """Robust epsilon-DP, delta-PO protocol against every constant deviation.

    The margin is the midpoint of (0, epsilon/(N-1)). The search takes the
    smallest L whose reciprocation length ceil((1-p_c) L / g_hat) keeps the
    loss within ``delta``, where g_hat charges miss detection at p_eps with
    unit weight. The result is certified on a p_d grid over (p_c, 1]; a
    candidate failing certification is skipped.
    """
    if not epsilon > 0 or not delta > 0:
        raise ValueError("epsilon and delta must be positive")
    N, p_c = cfg.n_nodes, cfg.p_c
    p_eps = robust_deviation_threshold(epsilon, cfg)
    # every constant deviation gains less than epsilon when p_eps > 1
    p_probe = min(p_eps, 1.0)
    margin = epsilon / (N - 1) / 2.0
    if not margin < cfg.q_c:
        raise ValueError(f"epsilon too large: margin {margin:.6g} is not below q_c {cfg.q_c:.6g}")
    grid = _deviation_grid(p_c, grid_step)
    best = (math.inf, None)
    for L in range(1, l_cap + 1):
        errors = private_error_probs(margin, L, p_probe, cfg)
        pf = errors.false_punishment
        g_hat = _dp_margin(pf, errors.miss_detection, 1.0, N, p_c)
        if g_hat <= 0:
            continue
        M = math.ceil((1.0 - p_c) * L / g_hat)
        loss = _loss(pf, L, M, N, p_c)
        if loss < best[0]:
            best = (loss, L)
        if loss > delta:
            continue
        proto = PrivateReviewProtocol(margin, L, M, N, p_c)
        gains = np.array([analyze_private(proto, float(p_d)).deviation_gain for p_d in grid])
        worst = int(np.argmax(gains))
        if gains[worst] <= epsilon:
            return RobustConstruction(proto, p_eps, g_hat, loss, float(gains[worst]),
                                      float(grid[worst]), grid, gains)
    raise CapExhaustedError(
        f"no review length <= {l_cap} meets epsilon={epsilon}, delta={delta}",
        best_loss=best[0] if best[1] is not None else None,
        best_review_len=best[1],
    )
