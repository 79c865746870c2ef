"""Exact solutions, curvature constants, worst-case bounds, and rate fitting.

Everything here exists so that optimizer runs can be judged against numbers
that are *computed*, not eyeballed: a certified minimizer for quadratic
problems, the constants entering the step caps and error bounds, the fixed
step error/gap bounds themselves, the decay-law prediction for decaying
schedules, and a log-log rate fit for measured curves.

For quadratic problems there is also an exact propagator for the expected
squared error of the randomized iteration (`expected_error_curve`), which
evolves the second moment of the residual through the two affine branch
maps.  It shares no code with the Monte Carlo path and is used as an
independent oracle in tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ._rng import rng_for
from .models import ModelVector
from .objectives import FLProblem, F_value
from .schedules import StepSchedule, calligraphic_L, convex_cap, pl_cap, zeta

__all__ = [
    "ConstantsReport",
    "ExactSolution",
    "hessian_f",
    "hessian_psi",
    "hessian_F",
    "solve_exact",
    "solution_set_basis",
    "distance_to_solution_set",
    "measure_mu_pl",
    "sigma_x_sq",
    "sigma_sq",
    "sigma_m_sq",
    "sigma_m_profile",
    "constants_report",
    "bound_convex_fixed",
    "bound_pl_fixed",
    "RateRegime",
    "bound_rate_exponent",
    "fit_rate",
    "exp_power_inequality_holds",
    "expected_error_curve",
]

# Dense-solver guard: direct factorizations above this size are a sign the
# caller wanted an iterative method instead.
MAX_DENSE_DIM = 5000

_NULL_TOL = 1e-9


def _require_quadratic(problem: FLProblem) -> tuple[np.ndarray, np.ndarray]:
    stack = problem.quadratic_stack()
    if stack is None:
        raise ValueError("operation requires a problem whose clients are all quadratic")
    if problem.n * problem.d > MAX_DENSE_DIM:
        raise ValueError(f"dense path capped at n*d <= {MAX_DENSE_DIM}")
    return stack


def hessian_f(problem: FLProblem) -> np.ndarray:
    """(1/n) blockdiag(A_i), the Hessian of the data term."""
    A, _ = _require_quadratic(problem)
    n, d = problem.n, problem.d
    H = np.zeros((n * d, n * d))
    for i in range(n):
        H[i * d : (i + 1) * d, i * d : (i + 1) * d] = A[i] / n
    return H


def hessian_psi(n: int, d: int) -> np.ndarray:
    """(1/n)(I_n - ee'/n) (x) I_d, the Hessian of the consensus penalty."""
    C = np.eye(n) - np.ones((n, n)) / n
    return np.kron(C, np.eye(d)) / n


def hessian_F(problem: FLProblem) -> np.ndarray:
    return hessian_f(problem) + problem.lam * hessian_psi(problem.n, problem.d)


@dataclass(frozen=True)
class ExactSolution:
    """Certified minimizer: the point, its value, and the gradient residual."""

    x_star: ModelVector
    F_star: float
    residual_norm: float


def _grad_linear_parts(problem: FLProblem) -> tuple[np.ndarray, np.ndarray]:
    """H and c with grad F(x) = H x - c, for quadratic problems."""
    _, b = _require_quadratic(problem)
    H = hessian_F(problem)
    c = (b / problem.n).reshape(-1)
    return H, c


def solve_exact(problem: FLProblem, residual_tol: float = 1e-10) -> ExactSolution:
    """Direct solve of grad F(x) = 0 for quadratic problems.

    Nonsingular systems get one step of iterative refinement; singular ones
    go through a minimum-norm least-squares solve (the flat problems built
    by `make_pl_problem` are consistent by construction).  Raises if the
    certified residual exceeds residual_tol, which signals an inconsistent
    singular system.
    """
    H, c = _grad_linear_parts(problem)
    eig = np.linalg.eigvalsh(H)
    scale = max(eig[-1], 1e-30)
    if eig[0] > _NULL_TOL * scale:
        x = np.linalg.solve(H, c)
        x = x - np.linalg.solve(H, H @ x - c)
    else:
        x, *_ = np.linalg.lstsq(H, c, rcond=None)
    residual = float(np.linalg.norm(H @ x - c))
    if residual > residual_tol:
        raise ValueError(
            f"gradient residual {residual:.3e} exceeds {residual_tol:.1e}; "
            "the singular system appears inconsistent"
        )
    x_star = ModelVector(x.reshape(problem.n, problem.d))
    return ExactSolution(x_star=x_star, F_star=F_value(problem, x_star), residual_norm=residual)


def solution_set_basis(problem: FLProblem) -> np.ndarray:
    """Orthonormal basis (columns) of the Hessian null space; empty for nonsingular."""
    H = hessian_F(problem)
    eig, vecs = np.linalg.eigh(H)
    scale = max(eig[-1], 1e-30)
    return vecs[:, eig <= _NULL_TOL * scale]


def distance_to_solution_set(problem: FLProblem, sol: ExactSolution, x: ModelVector) -> float:
    """Distance from x to the affine solution set x* + null(H)."""
    r = x.flat - sol.x_star.flat
    N = solution_set_basis(problem)
    if N.shape[1]:
        r = r - N @ (N.T @ r)
    return float(np.linalg.norm(r))


def measure_mu_pl(problem: FLProblem) -> float:
    """Smallest nonzero Hessian eigenvalue: the measured curvature constant."""
    eig = np.linalg.eigvalsh(hessian_F(problem))
    scale = max(eig[-1], 1e-30)
    nonzero = eig[eig > _NULL_TOL * scale]
    if nonzero.size == 0:
        raise ValueError("Hessian is identically zero")
    return float(nonzero[0])


def sigma_x_sq(problem: FLProblem, x: ModelVector, p: float) -> float:
    """Gradient-noise functional at x.

    (1/n^2) sum_i [ ||grad f_i(x_i)||^2 / (1-p) + (lam^2/p) ||x_i - mean||^2 ].
    Evaluated at a minimizer it equals the second moment of the randomized
    gradient there.
    """
    if not (0 < p < 1):
        raise ValueError("p must lie in (0, 1)")
    problem.check_point(x)
    n = problem.n
    total = 0.0
    xbar = x.parts.mean(axis=0)
    for i, c in enumerate(problem.clients):
        g = c.grad(x.part(i))
        dev = x.part(i) - xbar
        total += (g @ g) / (1 - p) + (problem.lam**2 / p) * (dev @ dev)
    return total / n**2


def sigma_sq(problem: FLProblem, sol: ExactSolution, p: float) -> float:
    """Gradient noise at the minimizer; the source of the fixed-step error floor."""
    return sigma_x_sq(problem, sol.x_star, p)


def sigma_m_sq(
    problem: FLProblem,
    p: float,
    samples: int = 64,
    radius: float | None = None,
    seed: int = 0,
) -> float:
    """Max of the noise functional over the solution set (sampled).

    The set is parameterized as x* + N u with N the Hessian null-space
    basis; `samples` points are drawn in a ball of the given radius
    (default 10x the minimum-norm solution's norm) and the maximum over
    those points plus x* itself is returned.  For a singleton set this is
    exactly sigma_sq.
    """
    sol = solve_exact(problem)
    best = sigma_sq(problem, sol, p)
    N = solution_set_basis(problem)
    q = N.shape[1]
    if q == 0 or samples <= 0:
        return best
    if radius is None:
        radius = 10.0 * max(1.0, sol.x_star.norm())
    rng = rng_for(seed, "solution-set-sampling")
    for _ in range(samples):
        u = rng.standard_normal(q)
        u *= radius * rng.random() ** (1.0 / q) / np.linalg.norm(u)
        point = ModelVector((sol.x_star.flat + N @ u).reshape(problem.n, problem.d))
        best = max(best, sigma_x_sq(problem, point, p))
    return best


def sigma_m_profile(
    problem: FLProblem, p: float, radii: Sequence[float], samples: int = 64, seed: int = 0
) -> list[float]:
    """Sampled noise maxima at increasing patch radii.

    A profile that grows with the radius flags a solution set on which the
    noise functional is unbounded, in which case the sampled `sigma_m_sq`
    is only a local estimate.
    """
    return [sigma_m_sq(problem, p, samples=samples, radius=r, seed=seed) for r in radii]


@dataclass(frozen=True)
class ConstantsReport:
    """Every constant the step caps and error bounds need, in one record."""

    calligraphic_L: float
    zeta: float
    L_F: float
    mu_F: float
    mu_pl: float | None
    sigma_sq: float | None
    sigma_m_sq: float | None
    convex_cap: float
    pl_cap: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def constants_report(
    problem: FLProblem,
    p: float,
    sol: ExactSolution | None = None,
    noise_samples: int = 64,
) -> ConstantsReport:
    """Assemble the constants for a problem at mixing probability p.

    Solution-dependent entries (the noise levels) are filled when a
    solution is supplied or the problem is quadratic and solvable here;
    mu_pl is measured from the Hessian for quadratic problems.
    """
    n, L, lam, mu = problem.n, problem.L, problem.lam, problem.mu
    cal_L = calligraphic_L(p, lam, L, n)
    z = zeta(p, lam, L, n)
    L_F = (L + lam) / n
    mu_F = mu / n
    mu_pl_val = None
    s2 = None
    sm2 = None
    if problem.quadratic_stack() is not None and n * problem.d <= MAX_DENSE_DIM:
        mu_pl_val = measure_mu_pl(problem)
        if sol is None:
            sol = solve_exact(problem)
    if sol is not None:
        s2 = sigma_sq(problem, sol, p)
        if mu_pl_val is not None:
            sm2 = sigma_m_sq(problem, p, samples=noise_samples)
    return ConstantsReport(
        calligraphic_L=cal_L,
        zeta=z,
        L_F=L_F,
        mu_F=mu_F,
        mu_pl=mu_pl_val,
        sigma_sq=s2,
        sigma_m_sq=sm2,
        convex_cap=convex_cap(p, lam, L, n),
        pl_cap=pl_cap(p, lam, L, n, mu_pl_val) if mu_pl_val else None,
    )


def bound_convex_fixed(k, alpha: float, constants: ConstantsReport, initial_sq_dist: float):
    """Fixed-step worst-case expected squared error after k steps.

    (1 - alpha mu_F)^k * initial + 18 alpha sigma^2 / mu_F, the geometric
    contraction toward a noise floor proportional to the step size.
    Accepts scalar or array k.
    """
    if constants.mu_F <= 0:
        raise ValueError("convex bound needs mu_F > 0")
    if constants.sigma_sq is None:
        raise ValueError("constants report lacks sigma_sq (no solution available)")
    k = np.asarray(k)
    floor = 18.0 * alpha * constants.sigma_sq / constants.mu_F
    out = (1.0 - alpha * constants.mu_F) ** k * initial_sq_dist + floor
    return float(out) if out.ndim == 0 else out


def bound_pl_fixed(k, alpha: float, constants: ConstantsReport, initial_gap: float):
    """Fixed-step worst-case expected objective gap after k steps.

    (1 - mu_pl alpha)^k * initial + 9 alpha L_F sigma_m^2 / mu_pl.
    """
    if not constants.mu_pl:
        raise ValueError("gap bound needs a measured mu_pl")
    if constants.sigma_m_sq is None:
        raise ValueError("constants report lacks sigma_m_sq")
    k = np.asarray(k)
    floor = 9.0 * alpha * constants.L_F * constants.sigma_m_sq / constants.mu_pl
    out = (1.0 - alpha * constants.mu_pl) ** k * initial_gap + floor
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RateRegime:
    """Predicted decay law for a decaying schedule.

    kind is "power" (error ~ k^-exponent) or "log_over_k" (error ~
    (1 + log k)/k, the boundary case).
    """

    kind: str
    exponent: float

    def law(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.float64)
        if self.kind == "log_over_k":
            return (1.0 + np.log(k)) / k
        return k ** (-self.exponent)


def bound_rate_exponent(theta: float, alpha1: float, mu_eff: float) -> RateRegime:
    """Decay law for alpha_k = alpha1 k^(-theta).

    theta < 1 gives k^(-theta).  At theta = 1 the product mu_eff * alpha1
    decides: below 1 the law is k^(-mu_eff alpha1), at exactly 1 it is
    (1 + log k)/k, above 1 it is 1/k.  mu_eff is passed explicitly because
    the squared-distance and objective-gap analyses use differently scaled
    curvature constants (mu/n versus the measured gradient-domination
    constant); making the caller pick prevents silent unit errors.
    """
    if not (0 < theta <= 1):
        raise ValueError("decay laws apply for theta in (0, 1]")
    if alpha1 <= 0 or mu_eff <= 0:
        raise ValueError("need alpha1 > 0 and mu_eff > 0")
    if theta < 1:
        return RateRegime("power", theta)
    prod = mu_eff * alpha1
    if prod < 1:
        return RateRegime("power", prod)
    if prod == 1:
        return RateRegime("log_over_k", 1.0)
    return RateRegime("power", 1.0)


def fit_rate(ks: Sequence[float], errors: Sequence[float], k_min: float, k_max: float) -> float:
    """Least-squares slope of log(error) against log(k), negated.

    Only samples with k in [k_min, k_max] enter; errors must be positive
    there.
    """
    ks = np.asarray(ks, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if ks.shape != errors.shape:
        raise ValueError("ks and errors must have matching shapes")
    mask = (ks >= k_min) & (ks <= k_max)
    if mask.sum() < 2:
        raise ValueError("need at least two samples inside the fit window")
    if np.any(errors[mask] <= 0):
        raise ValueError("errors must be positive inside the fit window")
    lk = np.log(ks[mask])
    le = np.log(errors[mask])
    slope = np.linalg.lstsq(np.column_stack([lk, np.ones_like(lk)]), le, rcond=None)[0][0]
    return float(-slope)


def exp_power_inequality_holds(v: float, a: float, xs: Sequence[float]) -> bool:
    """True iff exp(-v x) <= (a/(v e))^a * x^(-a) at every x in xs."""
    if v <= 0 or a <= 0:
        raise ValueError("need v > 0 and a > 0")
    xs = np.asarray(xs, dtype=np.float64)
    if np.any(xs <= 0):
        raise ValueError("the inequality is stated for x > 0")
    lhs = np.exp(-v * xs)
    rhs = (a / (v * math.e)) ** a * xs ** (-a)
    return bool(np.all(lhs <= rhs))


def expected_error_curve(
    problem: FLProblem,
    schedule: StepSchedule,
    p: float,
    x1: ModelVector,
    K: int,
    record: Sequence[int] | None = None,
):
    """Exact E||x^(k+1) - x*||^2 and E[F(x^(k+1)) - F*] for quadratic problems.

    Both branch updates are affine in x, so the residual's mean and second
    moment close under the iteration; propagating the (nd x nd) moment
    matrix gives the exact expectation over the coin randomness, with no
    sampling.  Returns (ks, sq_err, gap) at the recorded step counts
    (defaults to every step).  Cost is O(K (nd)^3): intended for modest
    problems as a ground-truth oracle.
    """
    if not (0 < p < 1):
        raise ValueError("p must lie in (0, 1)")
    problem.check_point(x1)
    A, b = _require_quadratic(problem)
    n, d = problem.n, problem.d
    nd = n * d
    H = hessian_F(problem)
    Hf = hessian_f(problem)
    Hpsi = hessian_psi(n, d)
    sol = solve_exact(problem)
    xs = sol.x_star.flat
    gf = Hf @ xs - (b / n).reshape(-1)  # grad of the data term at x*
    gpsi = Hpsi @ xs
    lam = problem.lam
    record = list(range(1, K + 1)) if record is None else sorted(set(int(k) for k in record))
    if record and (record[0] < 1 or record[-1] > K):
        raise ValueError("record indices must lie in 1..K")
    where = {k: j for j, k in enumerate(record)}
    sq = np.empty(len(record))
    gap = np.empty(len(record))
    m = x1.flat - xs
    M = np.outer(m, m)
    I = np.eye(nd)
    alphas = schedule.steps(K)
    for k in range(1, K + 1):
        a = alphas[k - 1]
        B0 = I - (a / (1 - p)) * Hf
        c0 = -(a / (1 - p)) * gf
        B1 = I - (a * lam / p) * Hpsi
        c1 = -(a * lam / p) * gpsi
        v0 = B0 @ m
        v1 = B1 @ m
        M = (1 - p) * (B0 @ M @ B0.T + np.outer(v0, c0) + np.outer(c0, v0) + np.outer(c0, c0)) + p * (
            B1 @ M @ B1.T + np.outer(v1, c1) + np.outer(c1, v1) + np.outer(c1, c1)
        )
        m = (1 - p) * (v0 + c0) + p * (v1 + c1)
        if k in where:
            j = where[k]
            sq[j] = np.trace(M)
            gap[j] = 0.5 * float(np.sum(H * M))  # tr(H M) / 2
    return np.asarray(record), sq, gap
