"""The randomized local/average descent loop and federated baselines.

Each iteration flips one Bernoulli(p) coin shared by all clients.  Tails
(coin = 0) take a local gradient step ``x_i -= alpha_k/(n(1-p)) grad f_i``;
heads aggregate and pull every client toward the average,
``x_i -= alpha_k lam/(n p) (x_i - mean)``.  Stacked, both branches equal
``x - alpha_k G(x)`` for the two-branch randomized gradient G, whose
probability-weighted average is exactly grad F.

Communications are counted only on 0 -> 1 coin transitions: while the coin
stays heads the aggregate is already known, and tails runs are purely local.

`run_l2gdv` is the reference single-seed loop.  `run_l2gdv_batch` runs many
seeds of the same configuration vectorized across a leading seed axis (for
stacked quadratic or equal-shard logistic problems) and falls back to the
reference loop otherwise; per-seed results agree with the reference loop to
floating-point roundoff.  FedAvg/FedProx round loops are provided for
side-by-side traces on the same partitioned data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._rng import rng_for
from .models import ModelVector, average, psi_grad
from .objectives import FLProblem, F_value, LogisticClient, f_grad
from .schedules import StepSchedule, convex_cap

__all__ = [
    "RunConfig",
    "Trace",
    "StepCapWarning",
    "stochastic_gradient",
    "l2gdv_step",
    "run_l2gdv",
    "run_l2gd",
    "run_l2gdv_batch",
    "count_communication_rounds",
    "run_fedavg",
    "run_fedprox",
]


class StepCapWarning(UserWarning):
    """The configured step exceeds the worst-case guarantee cap (run proceeds)."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run besides the problem and start point."""

    p: float
    schedule: StepSchedule
    K: int
    seed: int = 0
    record_every: int = 1
    lam: float | None = None  # provenance only; must match the problem's lam if set

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p must lie strictly inside (0, 1), got {self.p}")
        if self.K < 1:
            raise ValueError("need K >= 1")
        if self.record_every < 1:
            raise ValueError("need record_every >= 1")


@dataclass
class Trace:
    """Recorded run: row j describes iteration ks[j] (its step size and coin)
    and the iterate that step produced.

    Counters are exact over all K iterations regardless of the record grid.
    Metrics that do not apply to a run are NaN columns of the right length.
    """

    kind: str
    seed: int
    p: float
    lam: float
    K: int
    record_every: int
    alpha1: float
    theta: float
    ks: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    sq_dist: np.ndarray
    F_gap: np.ndarray
    train_loss: np.ndarray
    train_loss_avg: np.ndarray
    test_acc_avg: np.ndarray
    test_acc_local: np.ndarray
    comm_rounds: np.ndarray
    aggregation_steps: int
    communication_rounds: int
    initial_sq_dist: float = float("nan")
    initial_F_gap: float = float("nan")
    final_x: ModelVector | None = None

    def to_dict(self) -> dict:
        def col(a):
            return [None if (isinstance(v, float) and np.isnan(v)) else v for v in a.tolist()]

        return {
            "kind": self.kind,
            "seed": self.seed,
            "p": self.p,
            "lam": self.lam,
            "K": self.K,
            "record_every": self.record_every,
            "alpha1": self.alpha1,
            "theta": self.theta,
            "aggregation_steps": self.aggregation_steps,
            "communication_rounds": self.communication_rounds,
            "columns": {
                "k": self.ks.tolist(),
                "alpha_k": self.alpha.tolist(),
                "xi": col(self.xi),
                "sq_dist": col(self.sq_dist),
                "F_gap": col(self.F_gap),
                "train_loss": col(self.train_loss),
                "train_loss_avg": col(self.train_loss_avg),
                "test_acc_avg": col(self.test_acc_avg),
                "test_acc_local": col(self.test_acc_local),
                "comm_rounds": self.comm_rounds.tolist(),
            },
        }


def count_communication_rounds(xi: Sequence[int]) -> int:
    """Number of 0 -> 1 transitions in a coin sequence."""
    xi = np.asarray(xi)
    if xi.size < 2:
        return 0
    return int(np.sum((xi[:-1] == 0) & (xi[1:] == 1)))


def stochastic_gradient(problem: FLProblem, x: ModelVector, p: float, coin: int) -> ModelVector:
    """One branch of the randomized gradient of F.

    coin = 0 gives grad f(x)/(1-p); coin = 1 gives lam * grad psi(x)/p.
    Weighting the branches by (1-p, p) reproduces grad F exactly.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    if coin not in (0, 1):
        raise ValueError("coin must be 0 or 1")
    if coin == 0:
        return (1.0 / (1.0 - p)) * f_grad(problem, x)
    return (problem.lam / p) * psi_grad(x)


def _branch_scales(alphas, n: int, p: float, lam: float):
    """Per-iteration update factors: alpha/(n(1-p)) locally, alpha*lam/(n p) on heads."""
    alphas = np.asarray(alphas, dtype=np.float64)
    return alphas / (n * (1.0 - p)), alphas * lam / (n * p)


def _apply_branch(problem: FLProblem, parts: np.ndarray, coin: int, s0: float, s1: float) -> None:
    """In-place per-client branch update on an exclusive (n, d) buffer."""
    if coin == 1:
        xbar = parts.mean(axis=0)
        parts -= s1 * (parts - xbar)
    else:
        for i, c in enumerate(problem.clients):
            parts[i] -= s0 * c.grad(parts[i])


def l2gdv_step(
    problem: FLProblem, x: ModelVector, k: int, config: RunConfig, rng: np.random.Generator
):
    """One iteration: draw the shared coin, apply the matching branch.

    Returns (next iterate, coin, alpha_k).  The result equals
    x - alpha_k * stochastic_gradient(problem, x, p, coin) up to roundoff.
    """
    if k < 1:
        raise ValueError("iteration index starts at 1")
    problem.check_point(x)
    alpha = config.schedule.step_at(k)
    coin = int(rng.random() < config.p)
    s0, s1 = _branch_scales(alpha, problem.n, config.p, problem.lam)
    parts = np.array(x.parts, copy=True)
    _apply_branch(problem, parts, coin, float(s0), float(s1))
    return ModelVector(parts), coin, alpha


def _check_lam(problem: FLProblem, config: RunConfig) -> None:
    if config.lam is not None and config.lam != problem.lam:
        raise ValueError(f"config.lam={config.lam} but the problem has lam={problem.lam}")


def _warn_if_over_cap(problem: FLProblem, config: RunConfig) -> None:
    if problem.mu > 0:
        cap = convex_cap(config.p, problem.lam, problem.L, problem.n)
        if config.schedule.alpha1 > cap * (1 + 1e-9):
            warnings.warn(
                f"alpha1={config.schedule.alpha1:.6g} exceeds the guarantee cap "
                f"{cap:.6g}; the run proceeds without a worst-case bound",
                StepCapWarning,
                stacklevel=3,
            )


def _record_grid(K: int, record_every: int) -> np.ndarray:
    ks = np.arange(record_every, K + 1, record_every, dtype=np.int64)
    if ks.size == 0 or ks[-1] != K:
        ks = np.append(ks, K)
    return ks


def _eval_accuracy(w: np.ndarray, eval_data) -> float:
    X, y = eval_data
    pred = (X @ w >= 0.0).astype(np.float64)
    return float(np.mean(pred == y))


def _pooled_client_value(problem: FLProblem, w: np.ndarray) -> float:
    return sum(c.value(w) for c in problem.clients) / problem.n


def run_l2gdv(
    problem: FLProblem,
    config: RunConfig,
    oracle=None,
    eval_data=None,
    x1: ModelVector | None = None,
) -> Trace:
    """Reference single-seed run; deterministic given (problem, config, x1).

    oracle, when given, supplies x* and F* for the sq_dist / F_gap columns.
    eval_data is an optional (features, labels) pair matching the client
    dimension, used for accuracy columns on logistic problems.
    """
    _check_lam(problem, config)
    _warn_if_over_cap(problem, config)
    n, d = problem.n, problem.d
    x1 = ModelVector.zeros(n, d) if x1 is None else x1
    problem.check_point(x1)
    is_logistic = all(isinstance(c, LogisticClient) for c in problem.clients)

    xs_flat = None
    F_star = None
    if oracle is not None:
        xs_flat = oracle.x_star.parts
        F_star = oracle.F_star

    rng = rng_for(config.seed, "coins")
    alphas = config.schedule.steps(config.K)
    s0s, s1s = _branch_scales(alphas, n, config.p, problem.lam)
    grid = _record_grid(config.K, config.record_every)
    where = {int(k): j for j, k in enumerate(grid)}
    R = grid.size

    cols = {
        name: np.full(R, np.nan)
        for name in ("alpha", "xi", "sq_dist", "F_gap", "train_loss", "train_loss_avg",
                     "test_acc_avg", "test_acc_local")
    }
    comm_col = np.zeros(R, dtype=np.int64)

    parts = np.array(x1.parts, copy=True)
    prev_coin = None
    comms = 0
    aggs = 0

    def metrics(j: int, k: int, coin: int, alpha: float) -> None:
        x = ModelVector(parts)
        cols["alpha"][j] = alpha
        cols["xi"][j] = coin
        cols["train_loss"][j] = F_value(problem, x)
        if xs_flat is not None:
            r = parts - xs_flat
            cols["sq_dist"][j] = float((r * r).sum())
            cols["F_gap"][j] = cols["train_loss"][j] - F_star
        if is_logistic:
            w = average(x)
            cols["train_loss_avg"][j] = _pooled_client_value(problem, w)
            if eval_data is not None:
                cols["test_acc_avg"][j] = _eval_accuracy(w, eval_data)
                cols["test_acc_local"][j] = float(
                    np.mean([_eval_accuracy(parts[i], eval_data) for i in range(n)])
                )
        comm_col[j] = comms

    initial_sq = float(((x1.parts - xs_flat) ** 2).sum()) if xs_flat is not None else float("nan")
    initial_gap = F_value(problem, x1) - F_star if F_star is not None else float("nan")

    for k in range(1, config.K + 1):
        coin = int(rng.random() < config.p)
        if prev_coin == 0 and coin == 1:
            comms += 1
        aggs += coin
        _apply_branch(problem, parts, coin, s0s[k - 1], s1s[k - 1])
        j = where.get(k)
        if j is not None:
            metrics(j, k, coin, alphas[k - 1])
        prev_coin = coin

    return Trace(
        kind="l2gd" if config.schedule.theta == 0.0 else "l2gdv",
        seed=config.seed,
        p=config.p,
        lam=problem.lam,
        K=config.K,
        record_every=config.record_every,
        alpha1=config.schedule.alpha1,
        theta=config.schedule.theta,
        ks=grid,
        alpha=cols["alpha"],
        xi=cols["xi"],
        sq_dist=cols["sq_dist"],
        F_gap=cols["F_gap"],
        train_loss=cols["train_loss"],
        train_loss_avg=cols["train_loss_avg"],
        test_acc_avg=cols["test_acc_avg"],
        test_acc_local=cols["test_acc_local"],
        comm_rounds=comm_col,
        aggregation_steps=int(aggs),
        communication_rounds=int(comms),
        initial_sq_dist=initial_sq,
        initial_F_gap=float(initial_gap),
        final_x=ModelVector(parts),
    )


def run_l2gd(
    problem: FLProblem,
    config: RunConfig,
    oracle=None,
    eval_data=None,
    x1: ModelVector | None = None,
) -> Trace:
    """Constant-step special case: forces theta = 0, then delegates."""
    if config.schedule.theta != 0.0:
        config = replace(config, schedule=StepSchedule.constant(config.schedule.alpha1))
    return run_l2gdv(problem, config, oracle=oracle, eval_data=eval_data, x1=x1)


# ---------------------------------------------------------------------------
# Vectorized multi-seed runner
# ---------------------------------------------------------------------------


def run_l2gdv_batch(
    problem: FLProblem,
    config: RunConfig,
    seeds: Sequence[int],
    oracle=None,
    eval_data=None,
    x1: ModelVector | None = None,
) -> list[Trace]:
    """Run one configuration under many seeds, vectorized across seeds.

    Fast paths exist for all-quadratic problems and for logistic problems
    with equal shard sizes; anything else falls back to the reference loop
    per seed.  Output is one Trace per seed, matching what run_l2gdv would
    produce for that seed.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    _check_lam(problem, config)
    quad = problem.quadratic_stack()
    logi = problem.logistic_stack() if quad is None else None
    if quad is None and logi is None:
        out = []
        for s in seeds:
            try:
                out.append(
                    run_l2gdv(problem, replace(config, seed=s), oracle=oracle,
                              eval_data=eval_data, x1=x1)
                )
            except Exception as exc:
                raise RuntimeError(f"seed {s}: {exc}") from exc
        return out
    _warn_if_over_cap(problem, config)

    n, d = problem.n, problem.d
    M = len(seeds)
    K = config.K
    x1 = ModelVector.zeros(n, d) if x1 is None else x1
    problem.check_point(x1)

    X = np.broadcast_to(x1.parts, (M, n, d)).copy()
    coins = np.empty((M, K), dtype=bool)
    for j, s in enumerate(seeds):
        coins[j] = rng_for(s, "coins").random(K) < config.p

    alphas = config.schedule.steps(K)
    p, lam = config.p, problem.lam
    s0, s1 = _branch_scales(alphas, n, p, lam)

    xs_parts = oracle.x_star.parts if oracle is not None else None
    F_star = oracle.F_star if oracle is not None else None

    if quad is not None:
        A, b = quad

        def data_grads(X):  # (M, n, d) local gradients
            return np.einsum("nde,mne->mnd", A, X) - b

        def f_values(X):  # (M,) mean client loss
            q = 0.5 * np.einsum("mnd,nde,mne->m", X, A, X) - np.einsum("nd,mnd->m", b, X)
            return q / n
    else:
        Xc, yc, l2 = logi
        s_per = Xc.shape[1]

        def data_grads(X):
            z = np.einsum("nsd,mnd->mns", Xc, X)
            sig = 0.5 * (1.0 + np.tanh(0.5 * z))
            return np.einsum("nsd,mns->mnd", Xc, sig - yc) / s_per + l2 * X

        def f_values(X):
            z = np.einsum("nsd,mnd->mns", Xc, X)
            t = np.where(yc == 1.0, z, -z)
            ce = np.logaddexp(0.0, -t).mean(axis=2)  # (M, n)
            ridge = 0.5 * l2 * (X * X).sum(axis=2)
            return (ce + ridge).mean(axis=1)

    def F_values(X):
        dev = X - X.mean(axis=1, keepdims=True)
        return f_values(X) + lam * (dev * dev).sum(axis=(1, 2)) / (2.0 * n)

    grid = _record_grid(K, config.record_every)
    where = {int(k): j for j, k in enumerate(grid)}
    R = grid.size

    sq = np.full((R, M), np.nan)
    gap = np.full((R, M), np.nan)
    loss = np.full((R, M), np.nan)
    loss_avg = np.full((R, M), np.nan)
    acc_avg = np.full((R, M), np.nan)
    acc_loc = np.full((R, M), np.nan)
    comm_at = np.zeros((R, M), dtype=np.int64)

    comms = np.zeros(M, dtype=np.int64)
    aggs = np.zeros(M, dtype=np.int64)
    prev = None

    initial_sq = float(((x1.parts - xs_parts) ** 2).sum()) if xs_parts is not None else float("nan")
    initial_gap = float(F_value(problem, x1) - F_star) if F_star is not None else float("nan")

    def metrics(j: int, X) -> None:
        Fv = F_values(X)
        loss[j] = Fv
        if xs_parts is not None:
            r = X - xs_parts
            sq[j] = (r * r).sum(axis=(1, 2))
            gap[j] = Fv - F_star
        if logi is not None:
            W = X.mean(axis=1)  # (M, d)
            Wrep = np.broadcast_to(W[:, None, :], X.shape)
            loss_avg[j] = f_values(np.ascontiguousarray(Wrep))
            if eval_data is not None:
                Xe, ye = eval_data
                pred = (Xe @ W.T >= 0.0).astype(np.float64)  # (m_eval, M)
                acc_avg[j] = (pred == ye[:, None]).mean(axis=0)
                local = np.zeros(M)
                for i in range(n):
                    pred_i = (Xe @ X[:, i, :].T >= 0.0).astype(np.float64)
                    local += (pred_i == ye[:, None]).mean(axis=0)
                acc_loc[j] = local / n
        comm_at[j] = comms

    for k in range(1, K + 1):
        c = coins[:, k - 1]
        if prev is not None:
            comms += (~prev) & c
        aggs += c
        Gf = data_grads(X)
        Xbar = X.mean(axis=1, keepdims=True)
        X = X - np.where(c[:, None, None], s1[k - 1] * (X - Xbar), s0[k - 1] * Gf)
        j = where.get(k)
        if j is not None:
            metrics(j, X)
        prev = c

    kind = "l2gd" if config.schedule.theta == 0.0 else "l2gdv"
    traces = []
    for m, s in enumerate(seeds):
        traces.append(
            Trace(
                kind=kind,
                seed=s,
                p=p,
                lam=lam,
                K=K,
                record_every=config.record_every,
                alpha1=config.schedule.alpha1,
                theta=config.schedule.theta,
                ks=grid.copy(),
                alpha=alphas[grid - 1],
                xi=coins[m, grid - 1].astype(np.float64),
                sq_dist=sq[:, m].copy(),
                F_gap=gap[:, m].copy(),
                train_loss=loss[:, m].copy(),
                train_loss_avg=loss_avg[:, m].copy(),
                test_acc_avg=acc_avg[:, m].copy(),
                test_acc_local=acc_loc[:, m].copy(),
                comm_rounds=comm_at[:, m].copy(),
                aggregation_steps=int(aggs[m]),
                communication_rounds=int(comms[m]),
                initial_sq_dist=initial_sq,
                initial_F_gap=initial_gap,
                final_x=ModelVector(X[m]),
            )
        )
    return traces


# ---------------------------------------------------------------------------
# FedAvg / FedProx baselines
# ---------------------------------------------------------------------------


def _run_federated_rounds(
    client_features,
    client_labels,
    *,
    rounds: int,
    local_epochs: int,
    client_fraction: float,
    lr: float,
    seed: int,
    l2: float,
    prox_mu: float,
    kind: str,
    eval_data=None,
    record_every: int = 1,
) -> Trace:
    n = len(client_features)
    d = client_features[0].shape[1]
    if not (0.0 < client_fraction <= 1.0):
        raise ValueError("client_fraction must lie in (0, 1]")
    if rounds < 1 or local_epochs < 1:
        raise ValueError("need rounds >= 1 and local_epochs >= 1")
    sizes = np.array([len(yb) for yb in client_labels], dtype=np.float64)
    total = sizes.sum()

    def pooled_loss(w):
        val = 0.0
        for Xb, yb in zip(client_features, client_labels):
            z = Xb @ w
            t = np.where(yb == 1.0, z, -z)
            val += np.logaddexp(0.0, -t).sum()
        return float(val / total + 0.5 * l2 * (w @ w))

    def local_grad(Xb, yb, w, w_global):
        sig = 0.5 * (1.0 + np.tanh(0.5 * (Xb @ w)))
        g = Xb.T @ (sig - yb) / len(yb) + l2 * w
        if prox_mu:
            g = g + prox_mu * (w - w_global)
        return g

    rng = rng_for(seed, "federated-rounds")
    w = np.zeros(d)
    n_sel = max(1, int(round(client_fraction * n)))

    grid = _record_grid(rounds, record_every)
    where = {int(k): j for j, k in enumerate(grid)}
    R = grid.size
    loss_col = np.full(R, np.nan)
    acc_col = np.full(R, np.nan)
    comm_col = np.zeros(R, dtype=np.int64)

    for r in range(1, rounds + 1):
        sel = np.sort(rng.choice(n, size=n_sel, replace=False))
        locals_ = np.empty((n_sel, d))
        for idx, i in enumerate(sel):
            wi = w.copy()
            for _ in range(local_epochs):
                wi -= lr * local_grad(client_features[i], client_labels[i], wi, w)
            locals_[idx] = wi
        w = locals_.mean(axis=0)
        j = where.get(r)
        if j is not None:
            loss_col[j] = pooled_loss(w)
            if eval_data is not None:
                acc_col[j] = _eval_accuracy(w, eval_data)
            comm_col[j] = r

    nan = np.full(R, np.nan)
    return Trace(
        kind=kind,
        seed=seed,
        p=float("nan"),
        lam=float("nan"),
        K=rounds,
        record_every=record_every,
        alpha1=lr,
        theta=0.0,
        ks=grid,
        alpha=np.full(R, lr),
        xi=nan.copy(),
        sq_dist=nan.copy(),
        F_gap=nan.copy(),
        train_loss=loss_col,
        train_loss_avg=loss_col.copy(),
        test_acc_avg=acc_col,
        test_acc_local=nan.copy(),
        comm_rounds=comm_col,
        aggregation_steps=rounds,
        communication_rounds=rounds,
        final_x=ModelVector(np.broadcast_to(w, (n, d)).copy()),
    )


def _client_blocks(dataset, partition, intercept: bool):
    from .dataio import design_matrix

    X = design_matrix(dataset, intercept=intercept)
    y = dataset.labels.astype(np.float64)
    feats = [X[idx] for idx in partition.assignments]
    labels = [y[idx] for idx in partition.assignments]
    return feats, labels


def run_fedavg(
    dataset,
    partition,
    *,
    rounds: int,
    local_epochs: int,
    client_fraction: float,
    lr: float,
    seed: int,
    l2: float = 0.0,
    intercept: bool = True,
    eval_data=None,
    record_every: int = 1,
) -> Trace:
    """FedAvg on partitioned data: local full-batch steps, uniform averaging.

    With client_fraction = 1 and local_epochs = 1 a round reduces to one
    global gradient step at rate lr on the mean loss.
    """
    feats, labels = _client_blocks(dataset, partition, intercept)
    return _run_federated_rounds(
        feats,
        labels,
        rounds=rounds,
        local_epochs=local_epochs,
        client_fraction=client_fraction,
        lr=lr,
        seed=seed,
        l2=l2,
        prox_mu=0.0,
        kind="fedavg",
        eval_data=eval_data,
        record_every=record_every,
    )


def run_fedprox(
    dataset,
    partition,
    *,
    rounds: int,
    local_epochs: int,
    client_fraction: float,
    lr: float,
    seed: int,
    prox_mu: float,
    l2: float = 0.0,
    intercept: bool = True,
    eval_data=None,
    record_every: int = 1,
) -> Trace:
    """FedProx: FedAvg whose local steps add prox_mu * (w_i - w_global)."""
    if prox_mu < 0:
        raise ValueError("prox_mu must be >= 0")
    feats, labels = _client_blocks(dataset, partition, intercept)
    return _run_federated_rounds(
        feats,
        labels,
        rounds=rounds,
        local_epochs=local_epochs,
        client_fraction=client_fraction,
        lr=lr,
        seed=seed,
        l2=l2,
        prox_mu=prox_mu,
        kind="fedprox",
        eval_data=eval_data,
        record_every=record_every,
    )
