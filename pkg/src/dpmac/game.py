"""Stage game of slotted random access.

A node earns payoff 1 in a slot when it is the only transmitter. With
mixed actions the expected payoff is the success probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

__all__ = [
    "NetworkConfig",
    "MixedProfile",
    "stage_payoff",
    "pareto_payoff",
    "cooperation_prob",
]


def _check_prob(name: str, value: float, *, open_interval: bool = False) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if open_interval:
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    elif not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def cooperation_prob(n_nodes: int) -> float:
    """Symmetric Pareto-optimal transmission probability 1/N."""
    if int(n_nodes) != n_nodes or n_nodes < 2:
        raise ValueError(f"n_nodes must be an integer >= 2, got {n_nodes!r}")
    return 1.0 / n_nodes


@dataclass(frozen=True)
class NetworkConfig:
    """Number of nodes and the prescribed cooperation probability.

    ``cooperation_prob`` defaults to 1/N. Other values are allowed; analyses
    that depend on the default report it through :attr:`pc_is_optimal`.
    """

    n_nodes: int = 5
    cooperation_prob: Optional[float] = None

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            raise ValueError(f"n_nodes must be an integer >= 2, got {self.n_nodes!r}")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        if self.cooperation_prob is None:
            object.__setattr__(self, "cooperation_prob", 1.0 / self.n_nodes)
        _check_prob("cooperation_prob", self.cooperation_prob, open_interval=True)

    @property
    def p_c(self) -> float:
        return self.cooperation_prob

    @property
    def pc_is_optimal(self) -> bool:
        return math.isclose(self.cooperation_prob, 1.0 / self.n_nodes, rel_tol=0, abs_tol=1e-15)

    @property
    def q_c(self) -> float:
        """Per-node success probability when everyone transmits at p_c."""
        p = self.cooperation_prob
        return p * (1.0 - p) ** (self.n_nodes - 1)

    @property
    def idle_prob(self) -> float:
        """Probability that a slot is idle when everyone transmits at p_c."""
        return (1.0 - self.cooperation_prob) ** self.n_nodes


@dataclass(frozen=True)
class MixedProfile:
    probs: tuple

    def __init__(self, probs: Sequence[float]):
        probs = tuple(float(p) for p in probs)
        if len(probs) < 1:
            raise ValueError("profile must contain at least one node")
        for i, p in enumerate(probs):
            _check_prob(f"probs[{i}]", p)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)

    @classmethod
    def symmetric(cls, n_nodes: int, p: float) -> "MixedProfile":
        return cls([p] * n_nodes)


def stage_payoff(profile, node_index: int) -> float:
    """Success probability of ``node_index``: p_i times prod_{j != i} (1 - p_j)."""
    if not isinstance(profile, MixedProfile):
        profile = MixedProfile(profile)
    n = len(profile)
    if not 0 <= node_index < n:
        raise IndexError(f"node_index {node_index} out of range for {n} nodes")
    value = profile.probs[node_index]
    for j, p in enumerate(profile.probs):
        if j != node_index:
            value *= 1.0 - p
    return value


def pareto_payoff(n_nodes: int) -> float:
    """Per-node payoff at the symmetric Pareto optimum, (1 - 1/N)^(N-1) / N."""
    p_c = cooperation_prob(n_nodes)
    return (1.0 - p_c) ** (n_nodes - 1) * p_c
