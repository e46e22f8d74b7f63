"""Deviation-proof slotted MAC protocols from repeated-game review strategies."""

from .designer import DesignProblem, DesignResult, solve_design
from .exceptions import CapExhaustedError, InfeasibleError
from .game import MixedProfile, NetworkConfig, pareto_payoff, stage_payoff
from .private import (
    PrivateAnalysis,
    PrivateReviewProtocol,
    analyze_private,
    construct_near_optimal_private,
    construct_robust_eps_dp,
    state_count,
)
from .public import (
    EpsNeSchedule,
    PublicAnalysis,
    PublicReviewProtocol,
    analyze_public,
    best_response_public,
    best_response_value_public,
    construct_eps_ne,
    deviation_payoff_upper_bound,
)
from .simulator import DeviantSpec, SimConfig, SimReport, compare_to_analytic, run
from .stats import (
    AckTestConfig,
    ErrorProbabilities,
    IdleTestConfig,
    ack_error_probs,
    binom_cdf,
    chebyshev_pf_bound,
    idle_error_probs,
)

__version__ = "0.1.0"
