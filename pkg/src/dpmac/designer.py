"""Minimum-loss ACK-test protocol under an automaton-size budget."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from ._deterrence import shortest_deterrent
from .exceptions import InfeasibleError
from .game import NetworkConfig
from .private import (
    PrivateAnalysis,
    PrivateReviewProtocol,
    _dp_margin,
    _loss,
    analyze_private,
    private_error_probs,
    state_count,
)
from .stats import failing_count

__all__ = ["DesignProblem", "DesignResult", "Candidate", "solve_design", "enumerate_candidates"]


@dataclass(frozen=True)
class DesignProblem:
    b_grid: tuple
    ns_budget: int
    p_d: float
    network: NetworkConfig = NetworkConfig()

    def __post_init__(self):
        grid = tuple(sorted(set(float(b) for b in self.b_grid)))
        if not grid:
            raise ValueError("b_grid must not be empty")
        q_c = self.network.q_c
        for b in grid:
            if not 0.0 < b < q_c:
                raise ValueError(f"margin {b!r} outside (0, q_c={q_c:.12g})")
        object.__setattr__(self, "b_grid", grid)
        if isinstance(self.ns_budget, bool) or int(self.ns_budget) != self.ns_budget or self.ns_budget < 1:
            raise ValueError(f"ns_budget must be a positive integer, got {self.ns_budget!r}")
        object.__setattr__(self, "ns_budget", int(self.ns_budget))
        if not self.network.p_c < self.p_d <= 1.0:
            raise ValueError(f"p_d must lie in (p_c, 1], got {self.p_d!r}")


@dataclass(frozen=True, order=True)
class Candidate:
    efficiency_loss: float
    review_len: int
    recip_len: int
    margin: float = field(compare=True)


@dataclass(frozen=True)
class DesignResult:
    protocol: PrivateReviewProtocol
    efficiency_loss: float
    feasible_count: int
    n_states: int
    analysis: PrivateAnalysis
    candidates: tuple = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.to_dict(),
            "efficiency_loss": self.efficiency_loss,
            "efficiency_loss_4dp": round(self.efficiency_loss, 4),
            "feasible_count": self.feasible_count,
            "n_states": self.n_states,
            "p_d": self.analysis.p_d,
            "g": self.analysis.g,
            "m_min": self.analysis.m_min,
        }


def _review_states(L: int, k: int) -> int:
    return k * L - k * (k - 1) // 2


def enumerate_candidates(problem: DesignProblem):
    """Yield (candidate, n_feasible_M) for every DP-capable (B, L) within budget.

    L runs upward while the automaton with M = 1 still fits; the review part
    of the state count never shrinks as L grows, so the scan can stop there.
    """
    net, budget, p_d = problem.network, problem.ns_budget, problem.p_d
    for b in problem.b_grid:
        L = 1
        while True:
            k = failing_count(L, net.q_c - b) + 2
            review = _review_states(L, k)
            if review + 2 > budget:
                break
            max_m = (budget - review) // 2
            errors = private_error_probs(b, L, p_d, net)
            g = _dp_margin(errors.false_punishment, errors.miss_detection, p_d, net.n_nodes, net.p_c)
            if g > 0:
                m = max(1, shortest_deterrent(p_d, net.p_c, L, g))
                if m <= max_m:
                    loss = _loss(errors.false_punishment, L, m, net.n_nodes, net.p_c)
                    yield Candidate(loss, L, m, b), max_m - m + 1
            L += 1


def solve_design(problem: DesignProblem) -> DesignResult:
    """Step through the margin grid and feasible review lengths.

    For each (B, L) with a positive DP margin g, M is the smallest value at
    or above M_min; the winner minimizes loss, then L, then M.
    """
    best: Optional[Candidate] = None
    feasible = 0
    candidates = []
    for cand, n_m in enumerate_candidates(problem):
        feasible += n_m
        candidates.append(cand)
        if best is None or (cand.efficiency_loss, cand.review_len, cand.recip_len) < (
                best.efficiency_loss, best.review_len, best.recip_len):
            best = cand
    if best is None:
        raise InfeasibleError(
            f"no DP protocol fits within {problem.ns_budget} states",
            ns_budget=problem.ns_budget, b_grid=list(problem.b_grid), p_d=problem.p_d,
            minimum_states=min(
                _review_states(1, failing_count(1, problem.network.q_c - b) + 2) + 2
                for b in problem.b_grid),
        )
    net = problem.network
    proto = PrivateReviewProtocol(best.margin, best.review_len, best.recip_len,
                                  net.n_nodes, net.p_c)
    analysis = analyze_private(proto, problem.p_d)
    n_states = state_count(proto)
    if not (analysis.is_dp and n_states <= problem.ns_budget):
        raise RuntimeError(f"selected protocol fails re-verification: {proto}")
    return DesignResult(proto, analysis.efficiency_loss, feasible, n_states, analysis,
                        tuple(candidates))
