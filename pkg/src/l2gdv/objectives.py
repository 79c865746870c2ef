"""Client loss oracles and problem generators.

Two client families are provided: quadratics ``f(v) = v'Av/2 - b'v`` with
exactly known curvature, and binary ridge logistic regression whose
smoothness constant is computed from the data rather than assumed.  An
`FLProblem` bundles n clients with the coupling weight ``lam`` and defines
the composite objective ``F(x) = (1/n) sum_i f_i(x_i) + lam * psi(x)``.

Generators return problems that are deterministic in their seed:

* `make_strongly_convex_problem` draws client spectra inside [mu, L] with
  both endpoints attained, so the curvature constants used by step-size
  caps are tight rather than conservative.
* `make_pl_problem` builds rank-deficient clients sharing a common null
  space; the composite objective then has a genuinely flat solution set
  but still attains its minimum (each b_i is constructed inside the range
  of A_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from ._rng import haar_orthogonal, rng_for
from .models import ModelVector, psi_grad, psi_value

__all__ = [
    "QuadraticClient",
    "LogisticClient",
    "ClientObjective",
    "FLProblem",
    "f_value",
    "f_grad",
    "F_value",
    "F_grad",
    "make_strongly_convex_problem",
    "make_pl_problem",
    "finite_diff_check",
    "central_diff_grad",
    "reference_gd",
]

_SYM_TOL = 1e-12


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z| in both directions
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class QuadraticClient:
    """Loss f(v) = v'Av/2 - b'v with symmetric PSD A."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=np.float64, copy=True)
        b = np.array(self.b, dtype=np.float64, copy=True).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has dimension {b.shape[0]}, A is {A.shape[0]}x{A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite entries")
        scale = max(1.0, float(np.abs(A).max()))
        if np.abs(A - A.T).max() > _SYM_TOL * scale:
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        eig = np.linalg.eigvalsh(A)
        if eig[0] < -1e-10 * scale:
            raise ValueError(f"A must be PSD, smallest eigenvalue {eig[0]:.3e}")
        A.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_eig", (float(max(eig[0], 0.0)), float(eig[-1])))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @property
    def smoothness(self) -> float:
        return self._eig[1]

    @property
    def strong_convexity(self) -> float:
        return self._eig[0]

    def value(self, v: np.ndarray) -> float:
        v = self._check(v)
        return float(0.5 * v @ self.A @ v - self.b @ v)

    def grad(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        return self.A @ v - self.b

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValueError(f"point has dimension {v.shape[0]}, client expects {self.dim}")
        return v


@dataclass(frozen=True)
class LogisticClient:
    """Binary ridge logistic regression on a fixed (features, labels) block.

    Loss is the mean cross-entropy plus (l2/2)||v||^2.  The smoothness
    constant lambda_max(X'X)/(4m) + l2 is computed from the data at
    construction.
    """

    features: np.ndarray
    labels: np.ndarray
    l2: float = 0.0

    def __post_init__(self) -> None:
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"features must be a nonempty (m, d) matrix, got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError("label count does not match sample count")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature entries")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0/1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        y = y.astype(np.float64)
        m = X.shape[0]
        lam_max = float(np.linalg.eigvalsh(X.T @ X)[-1])
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "_L", lam_max / (4.0 * m) + self.l2)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def smoothness(self) -> float:
        return self._L

    @property
    def strong_convexity(self) -> float:
        return float(self.l2)

    def value(self, v: np.ndarray) -> float:
        v = self._check(v)
        z = self.features @ v
        # mean of log(1 + exp(-t)) with t = z on label 1, -z on label 0
        t = np.where(self.labels == 1.0, z, -z)
        return float(np.mean(np.logaddexp(0.0, -t)) + 0.5 * self.l2 * (v @ v))

    def grad(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        s = _sigmoid(self.features @ v)
        return self.features.T @ (s - self.labels) / self.m + self.l2 * v

    def accuracy(self, v: np.ndarray) -> float:
        v = self._check(v)
        pred = (self.features @ v >= 0.0).astype(np.float64)
        return float(np.mean(pred == self.labels))

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValueError(f"point has dimension {v.shape[0]}, client expects {self.dim}")
        return v


ClientObjective = Union[QuadraticClient, LogisticClient]


@dataclass(frozen=True)
class FLProblem:
    """n client objectives plus the consensus weight lam, defining F."""

    clients: tuple
    lam: float
    L: float = field(init=False)
    mu: float = field(init=False)

    def __post_init__(self) -> None:
        clients = tuple(self.clients)
        if not clients:
            raise ValueError("need at least one client")
        d = clients[0].dim
        if any(c.dim != d for c in clients):
            raise ValueError("all clients must share one dimension")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")
        object.__setattr__(self, "clients", clients)
        object.__setattr__(self, "L", max(c.smoothness for c in clients))
        object.__setattr__(self, "mu", min(c.strong_convexity for c in clients))

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def d(self) -> int:
        return self.clients[0].dim

    def check_point(self, x: ModelVector) -> None:
        if x.n != self.n or x.d != self.d:
            raise ValueError(
                f"model vector is ({x.n}, {x.d}), problem expects ({self.n}, {self.d})"
            )

    def quadratic_stack(self):
        """Stacked (A, b) arrays when every client is quadratic, else None."""
        if all(isinstance(c, QuadraticClient) for c in self.clients):
            A = np.stack([c.A for c in self.clients])
            b = np.stack([c.b for c in self.clients])
            return A, b
        return None

    def logistic_stack(self):
        """(X, y, l2) stacks for equal-sized logistic clients, else None."""
        if not all(isinstance(c, LogisticClient) for c in self.clients):
            return None
        sizes = {c.m for c in self.clients}
        l2s = {c.l2 for c in self.clients}
        if len(sizes) != 1 or len(l2s) != 1:
            return None
        X = np.stack([c.features for c in self.clients])
        y = np.stack([c.labels for c in self.clients])
        return X, y, l2s.pop()


def f_value(problem: FLProblem, x: ModelVector) -> float:
    """Mean of the client losses at their own parts."""
    problem.check_point(x)
    return sum(c.value(x.part(i)) for i, c in enumerate(problem.clients)) / problem.n


def f_grad(problem: FLProblem, x: ModelVector) -> ModelVector:
    """Stacked gradient: part i is (1/n) grad f_i(x_i)."""
    problem.check_point(x)
    g = np.empty((problem.n, problem.d))
    for i, c in enumerate(problem.clients):
        g[i] = c.grad(x.part(i))
    return ModelVector(g / problem.n)


def F_value(problem: FLProblem, x: ModelVector) -> float:
    return f_value(problem, x) + problem.lam * psi_value(x)


def F_grad(problem: FLProblem, x: ModelVector) -> ModelVector:
    return f_grad(problem, x) + problem.lam * psi_grad(x)


def make_strongly_convex_problem(
    n: int, d: int, mu: float, L: float, lam: float, seed: int, b_scale: float = 1.0
) -> FLProblem:
    """Random problem whose clients are mu-strongly convex and L-smooth.

    Eigenvalues are drawn uniformly in [mu, L] and one is forced to each
    endpoint (for d >= 2, in every client), then conjugated by a Haar
    orthogonal basis per client.  Linear terms are standard normal times
    b_scale.  Bit-identical output for identical arguments.
    """
    if not (0 < mu <= L):
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    rng = rng_for(seed, "strongly-convex-problem")
    clients = []
    for i in range(n):
        eig = rng.uniform(mu, L, size=d)
        if d >= 2:
            eig[0], eig[1] = mu, L
        else:
            # d = 1 leaves one eigenvalue per client: alternate the
            # endpoints across clients so both are still attained.
            eig[0] = mu if i % 2 == 0 else L
        Q = haar_orthogonal(d, rng)
        A = (Q * eig) @ Q.T
        A = 0.5 * (A + A.T)
        b = b_scale * rng.standard_normal(d)
        clients.append(QuadraticClient(A, b))
    return FLProblem(clients, lam)


def make_pl_problem(n: int, d: int, rank: int, L: float, lam: float, seed: int) -> FLProblem:
    """Rank-deficient quadratic clients with a shared null space.

    All clients are singular along the same (d - rank)-dimensional subspace,
    so the composite objective has a flat solution set; its curvature
    constant is the smallest nonzero eigenvalue of the assembled Hessian and
    should be measured, not assumed.  Nonzero client eigenvalues are drawn
    in [0.8 L, L] (max forced to L) to keep the reduced problem well
    conditioned, and each b_i = A_i y_i lies in range(A_i) so the minimum is
    attained.
    """
    if not (1 <= rank < d):
        raise ValueError(f"need 1 <= rank < d, got rank={rank}, d={d}")
    if L <= 0:
        raise ValueError("need L > 0")
    if n < 1:
        raise ValueError("need n >= 1")
    rng = rng_for(seed, "pl-problem")
    Q = haar_orthogonal(d, rng)  # columns rank..d-1 span the shared null space
    clients = []
    for _ in range(n):
        eig = rng.uniform(0.8 * L, L, size=rank)
        eig[rng.integers(rank)] = L
        R = haar_orthogonal(rank, rng)  # client-specific basis inside the range block
        V = Q[:, :rank] @ R
        A = (V * eig) @ V.T
        A = 0.5 * (A + A.T)
        y = rng.standard_normal(d)
        clients.append(QuadraticClient(A, A @ y))
    return FLProblem(clients, lam)


def central_diff_grad(
    func: Callable[[np.ndarray], float], v: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    g = np.empty_like(v)
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = step
        g[j] = (func(v + e) - func(v - e)) / (2.0 * step)
    return g


def finite_diff_check(client: ClientObjective, v: np.ndarray, tol: float, step: float = 1e-6) -> bool:
    """True iff the analytic gradient matches central differences to relative error tol."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    num = central_diff_grad(client.value, v, step)
    ana = client.grad(v)
    denom = max(1.0, float(np.linalg.norm(ana)))
    return bool(np.linalg.norm(num - ana) <= tol * denom)


def reference_gd(
    client: ClientObjective,
    x0: np.ndarray | None = None,
    max_iters: int = 200_000,
    grad_tol: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on a single loss oracle, to stationarity.

    Steps at 1/L (the client's computed smoothness), stopping when the
    gradient norm falls below grad_tol or the budget runs out.  Serves as
    an independent training oracle for accuracy/loss targets.
    """
    w = np.zeros(client.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    step = 1.0 / client.smoothness
    for _ in range(max_iters):
        g = client.grad(w)
        if np.linalg.norm(g) < grad_tol:
            break
        w -= step * g
    return w, client.value(w)
