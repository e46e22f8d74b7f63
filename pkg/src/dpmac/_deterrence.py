"""Exact sign of the deterrence condition (p_d - p_c) L <= g M.

Near the boundary, or when g is tiny and M_min huge, float products cannot
separate M_min from its neighbouring integers. Both helpers take the float
inputs as exact rationals, so the shortest deterrent M and the sign of the
deviation gain always agree.
"""
import math
from fractions import Fraction


def deterrence_balance(p_d: float, p_c: float, review_len: int, g: float, recip_len: int) -> float:
    """(p_d - p_c) L - g M, computed exactly and rounded once (sign preserved)."""
    return float((Fraction(p_d) - Fraction(p_c)) * review_len - Fraction(g) * recip_len)


def shortest_deterrent(p_d: float, p_c: float, review_len: int, g: float) -> int:
    """Smallest integer M with (p_d - p_c) L <= g M, or 0 when g <= 0."""
    if not g > 0:
        return 0
    return math.ceil((Fraction(p_d) - Fraction(p_c)) * review_len / Fraction(g))
