"""Step-size schedules and the theoretical step caps.

The schedule family is alpha_k = alpha1 * k^(-theta) with theta in [0, 1];
theta = 0 is the constant schedule.  theta > 1 is rejected at construction:
such schedules have summable steps and provably cannot converge, so they are
unconstructible rather than warned about.  Exceeding one of the step *caps*
below, by contrast, only voids the worst-case guarantees (they are
sufficient conditions), so runs merely warn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StepSchedule",
    "calligraphic_L",
    "zeta",
    "convex_cap",
    "pl_cap",
]


@dataclass(frozen=True)
class StepSchedule:
    """alpha_k = alpha1 * k^(-theta), k = 1, 2, ..."""

    alpha1: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha1) and self.alpha1 > 0):
            raise ValueError(f"alpha1 must be finite and positive, got {self.alpha1}")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError(
                f"theta must lie in [0, 1], got {self.theta}; theta > 1 makes the "
                "step sum finite, which rules out convergence"
            )

    @classmethod
    def constant(cls, alpha: float) -> "StepSchedule":
        return cls(alpha1=alpha, theta=0.0)

    def step_at(self, k: int) -> float:
        if k < 1:
            raise ValueError(f"iteration index starts at 1, got k={k}")
        return self.alpha1 * float(k) ** (-self.theta)

    def steps(self, K: int) -> np.ndarray:
        """Vector (alpha_1, ..., alpha_K)."""
        if K < 1:
            raise ValueError("need K >= 1")
        return self.alpha1 * np.arange(1, K + 1, dtype=np.float64) ** (-self.theta)

    def __call__(self, k: int) -> float:
        return self.step_at(k)


def _check_p(p: float) -> None:
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")


def calligraphic_L(p: float, lam: float, L: float, n: int) -> float:
    """Mixed smoothness constant (1/n) max{(1+2p)L/(1-p), (3-2p)lam/p}."""
    _check_p(p)
    if L <= 0:
        raise ValueError("need L > 0")
    if lam < 0:
        raise ValueError("need lam >= 0")
    return max((1 + 2 * p) * L / (1 - p), (3 - 2 * p) * lam / p) / n


def zeta(p: float, lam: float, L: float, n: int) -> float:
    """Curvature mix (1+2p)L^2/((1-p)n^2) + (3-2p)lam^2/(p n^2)."""
    _check_p(p)
    return (1 + 2 * p) * L**2 / ((1 - p) * n**2) + (3 - 2 * p) * lam**2 / (p * n**2)


def convex_cap(p: float, lam: float, L: float, n: int) -> float:
    """Largest step with a worst-case guarantee for strongly convex clients: 1/(2 calligraphic_L)."""
    return 1.0 / (2.0 * calligraphic_L(p, lam, L, n))


def pl_cap(p: float, lam: float, L: float, n: int, mu_pl: float) -> float:
    """Step cap mu_pl^2 / (2 zeta L_F) for gradient-dominated objectives.

    mu_pl is the measured curvature constant of the composite objective
    (smallest nonzero eigenvalue of its Hessian for quadratics), and
    L_F = (L + lam)/n its smoothness.
    """
    if mu_pl <= 0:
        raise ValueError(f"mu_pl must be > 0, got {mu_pl}")
    L_F = (L + lam) / n
    return mu_pl**2 / (2.0 * zeta(p, lam, L, n) * L_F)
