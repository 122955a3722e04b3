"""Admissible exponents of the existence theory.

``+inf`` is returned as ``math.inf``; the convention ``1/a^+ = +inf`` for
``a <= 0`` is applied throughout.
"""

from __future__ import annotations

import math

__all__ = ["inv_pos", "qbar", "ptilde", "mbar"]


def inv_pos(a: float) -> float:
    """``1/a^+`` with the value ``+inf`` when ``a <= 0``."""
    return math.inf if a <= 0 else 1.0 / a


def _check_unit(**kw):
    for name, v in kw.items():
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {v}")


def qbar(m: float, s: float, t: float, N: int) -> float:
    """Upper bound on the gradient power ``q`` for existence."""
    _check_unit(s=s, t=t)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    crit = N / s
    if t <= s and m >= crit:
        return math.inf
    if t > s and m > crit:
        return s / (N * (t - s))
    if t <= s:
        return N / (N - m * s)
    return N / (N - s * m + m * N * (t - s))


def ptilde(m: float, s: float, t: float, N: int) -> float:
    """Integrability ceiling of the Calderón-Zygmund estimate.

    At ``m == N/(2s - t)`` neither displayed case applies; the second branch
    is used there.
    """
    _check_unit(s=s, t=t)
    if t < s:
        raise ValueError(f"ptilde is defined for s <= t only, got s={s}, t={t}")
    if not t < min(1.0, s * (1.0 + 1.0 / N)):
        raise ValueError(f"ptilde needs t < min(1, s(1+1/N)), got t={t}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    top = inv_pos(t - s)
    if m > N / (2 * s - t):
        return top
    return min(m * inv_pos(N - m * s + m * N * (t - s)) * N, top)


def mbar(s: float, t: float, N: int) -> float:
    """Lower bound on the datum exponent ``m`` for the Stein-functional problem."""
    _check_unit(s=s, t=t)
    return 2.0 * N / (N + 2.0 * s - 2.0 * N * max(t - s, 0.0))
