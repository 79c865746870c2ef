"""Experiment orchestration: specs, multi-seed aggregation, CSV/JSON output.

A run is described by a flat key=value spec (file, dict, CLI overrides, or
``L2GDV_``-prefixed environment variables), which keeps experiment
provenance diff-friendly.  `run_experiment` builds the problem, solves the
exact oracle when one exists, runs every seed, and aggregates the traces
together with the applicable constants report and worst-case bound curve.

Identical specs produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import (
    Dataset,
    Partition,
    design_matrix,
    load_idx,
    partition_iid,
    partition_noniid,
    synth_gaussian_classes,
)
from .models import ModelVector
from .objectives import (
    FLProblem,
    LogisticClient,
    make_pl_problem,
    make_strongly_convex_problem,
)
from .optimizer import RunConfig, Trace, run_fedavg, run_fedprox, run_l2gdv_batch
from .schedules import StepSchedule, convex_cap
from .theory import (
    ConstantsReport,
    ExactSolution,
    bound_convex_fixed,
    bound_pl_fixed,
    constants_report,
    solve_exact,
)

__all__ = [
    "ExperimentSpec",
    "AggregateTrace",
    "parse_config_text",
    "load_config",
    "apply_env_overrides",
    "problem_from_dataset",
    "run_experiment",
    "aggregate",
    "emit_csv",
    "emit_json",
    "CSV_COLUMNS",
]

ENV_PREFIX = "L2GDV_"

CSV_COLUMNS = [
    "k",
    "alpha_k",
    "mean_sq_dist",
    "se_sq_dist",
    "mean_F_gap",
    "se_F_gap",
    "bound",
    "comm_rounds_mean",
    "test_acc_mean",
]

PROBLEM_KINDS = ("strongly-convex-quad", "pl-quad", "logistic-synth", "logistic-idx")
ALGOS = ("l2gdv", "l2gd", "fedavg", "fedprox")


def _parse_seeds(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return tuple(range(int(lo), int(hi)))
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot parse boolean from {text!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """Flat description of one experiment; every field has a config key."""

    problem: str = "strongly-convex-quad"
    n: int = 10
    d: int = 5
    mu: float = 0.1
    L: float = 1.0
    rank: int = 4
    lam: float = 1.0
    problem_seed: int = 0
    b_scale: float = 1.0
    # data-backed problems
    m: int = 4000
    classes: int = 2
    separation: float = 10.0
    l2: float = 0.0
    partition: str = "iid"
    shards_per_client: int = 2
    data_seed: int = 0
    intercept: bool = True
    test_m: int = 0
    images: str = ""
    labels: str = ""
    # algorithm
    algo: str = "l2gdv"
    p: float = 0.5
    alpha1: float | str = "auto"
    theta: float = 0.0
    K: int = 1000
    seeds: tuple = (0,)
    record_every: int = 1
    start: str = "zeros"
    # baseline hyperparameters
    rounds: int = 100
    local_epochs: int = 1
    client_fraction: float = 1.0
    lr: float = 0.1
    prox_mu: float = 0.0
    # outputs
    out: str = ""

    def __post_init__(self) -> None:
        if self.problem not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.problem!r}; choose from {PROBLEM_KINDS}")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; choose from {ALGOS}")
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        if self.problem == "logistic-idx":
            for path in (self.images, self.labels):
                if not path or not Path(path).exists():
                    raise ValueError(f"idx file not found: {path!r}")
        if self.start not in ("zeros", "solution"):
            raise ValueError("start must be 'zeros' or 'solution'")

    # --- construction from flat key/value maps --------------------------------

    _COERCERS = {
        "n": int, "d": int, "rank": int, "problem_seed": int, "m": int, "classes": int,
        "shards_per_client": int, "data_seed": int, "test_m": int, "K": int,
        "record_every": int, "rounds": int, "local_epochs": int,
        "mu": float, "L": float, "lam": float, "b_scale": float, "separation": float,
        "l2": float, "p": float, "theta": float, "client_fraction": float, "lr": float,
        "prox_mu": float,
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        kwargs = {}
        for key, value in raw.items():
            key = key.strip().lower().replace("-", "_")
            if key == "lambda":
                key = "lam"
            elif key == "k":
                key = "K"
            elif key == "l":
                key = "L"
            if key == "seeds":
                kwargs["seeds"] = _parse_seeds(value)
            elif key == "seed":
                kwargs["seeds"] = _parse_seeds(value)
            elif key == "intercept":
                kwargs["intercept"] = _parse_bool(value)
            elif key == "alpha1":
                kwargs["alpha1"] = value if str(value).strip() == "auto" else float(value)
            elif key in cls._COERCERS:
                kwargs[key] = cls._COERCERS[key](value)
            elif key in ("problem", "algo", "partition", "start", "out", "images", "labels"):
                kwargs[key] = str(value).strip()
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; blanks ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_env_overrides(raw: dict, environ=None) -> dict:
    """Overlay L2GDV_<KEY> environment variables onto a raw key map."""
    environ = os.environ if environ is None else environ
    merged = dict(raw)
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            merged[name[len(ENV_PREFIX):].lower()] = value
    return merged


def load_config(path, overrides: dict | None = None, use_env: bool = True) -> ExperimentSpec:
    """Spec from a config file, with env and explicit overrides (in that order)."""
    raw = parse_config_text(Path(path).read_text())
    if use_env:
        raw = apply_env_overrides(raw)
    if overrides:
        raw.update(overrides)
    return ExperimentSpec.from_dict(raw)


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------


def problem_from_dataset(
    dataset: Dataset,
    partition: Partition,
    lam: float,
    l2: float = 0.0,
    intercept: bool = True,
) -> FLProblem:
    """One ridge logistic client per partition block (binary labels only)."""
    if dataset.class_count != 2:
        raise ValueError("logistic problems need a binary dataset")
    X = design_matrix(dataset, intercept=intercept)
    clients = [
        LogisticClient(X[idx], dataset.labels[idx].astype(np.float64), l2=l2)
        for idx in partition.assignments
    ]
    return FLProblem(tuple(clients), lam)


def _build_partition(spec: ExperimentSpec, ds: Dataset) -> Partition:
    if spec.partition == "iid":
        return partition_iid(ds, spec.n, spec.data_seed)
    if spec.partition == "noniid":
        return partition_noniid(ds, spec.n, spec.shards_per_client, spec.data_seed)
    raise ValueError(f"unknown partition {spec.partition!r}")


def build_problem(spec: ExperimentSpec):
    """Return (problem, dataset, partition, eval_data) for a spec."""
    if spec.problem == "strongly-convex-quad":
        return (
            make_strongly_convex_problem(
                spec.n, spec.d, spec.mu, spec.L, spec.lam, spec.problem_seed, spec.b_scale
            ),
            None,
            None,
            None,
        )
    if spec.problem == "pl-quad":
        return make_pl_problem(spec.n, spec.d, spec.rank, spec.L, spec.lam, spec.problem_seed), None, None, None
    if spec.problem == "logistic-synth":
        ds = synth_gaussian_classes(spec.m, spec.d, spec.classes, spec.separation, spec.data_seed)
    else:
        ds = load_idx(spec.images, spec.labels)
    part = _build_partition(spec, ds)
    problem = problem_from_dataset(ds, part, spec.lam, l2=spec.l2, intercept=spec.intercept)
    eval_data = None
    if spec.problem == "logistic-synth" and spec.test_m > 0:
        test = synth_gaussian_classes(
            spec.test_m, spec.d, spec.classes, spec.separation, spec.data_seed + 1
        )
        eval_data = (design_matrix(test, intercept=spec.intercept), test.labels.astype(np.float64))
    return problem, ds, part, eval_data


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class AggregateTrace:
    """Mean and standard error of each metric over seeds, on one record grid."""

    ks: np.ndarray
    alpha: np.ndarray
    mean_sq_dist: np.ndarray
    se_sq_dist: np.ndarray
    mean_F_gap: np.ndarray
    se_F_gap: np.ndarray
    mean_train_loss: np.ndarray
    se_train_loss: np.ndarray
    mean_train_loss_avg: np.ndarray
    test_acc_mean: np.ndarray
    test_acc_local_mean: np.ndarray
    comm_rounds_mean: np.ndarray
    n_seeds: int
    bound: np.ndarray | None = None
    constants: ConstantsReport | None = None
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def col(a):
            if a is None:
                return None
            return [None if np.isnan(v) else float(v) for v in np.asarray(a, dtype=np.float64)]

        return {
            "n_seeds": self.n_seeds,
            "spec": self.spec,
            "constants": None if self.constants is None else asdict(self.constants),
            "columns": {
                "k": self.ks.tolist(),
                "alpha_k": self.alpha.tolist(),
                "mean_sq_dist": col(self.mean_sq_dist),
                "se_sq_dist": col(self.se_sq_dist),
                "mean_F_gap": col(self.mean_F_gap),
                "se_F_gap": col(self.se_F_gap),
                "mean_train_loss": col(self.mean_train_loss),
                "se_train_loss": col(self.se_train_loss),
                "mean_train_loss_avg": col(self.mean_train_loss_avg),
                "test_acc_mean": col(self.test_acc_mean),
                "test_acc_local_mean": col(self.test_acc_local_mean),
                "comm_rounds_mean": col(self.comm_rounds_mean),
                "bound": col(self.bound),
            },
        }


def _mean_se(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = stack.mean(axis=0)
    if stack.shape[0] == 1:
        return mean, np.zeros_like(mean)
    se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    return mean, se


def aggregate(
    traces: list[Trace],
    bound: np.ndarray | None = None,
    constants: ConstantsReport | None = None,
    spec: dict | None = None,
) -> AggregateTrace:
    """Combine same-grid traces; seeds are summed in seed order, so the
    result is independent of the order the runs finished in."""
    if not traces:
        raise ValueError("need at least one trace")
    traces = sorted(traces, key=lambda t: t.seed)
    grid = traces[0].ks
    for t in traces[1:]:
        if not np.array_equal(t.ks, grid):
            raise ValueError("traces must share one record grid")

    def stack(name):
        return np.stack([getattr(t, name) for t in traces])

    mean_sq, se_sq = _mean_se(stack("sq_dist"))
    mean_gap, se_gap = _mean_se(stack("F_gap"))
    mean_loss, se_loss = _mean_se(stack("train_loss"))
    mean_loss_avg, _ = _mean_se(stack("train_loss_avg"))
    acc_avg, _ = _mean_se(stack("test_acc_avg"))
    acc_loc, _ = _mean_se(stack("test_acc_local"))
    comm, _ = _mean_se(stack("comm_rounds").astype(np.float64))
    return AggregateTrace(
        ks=grid.copy(),
        alpha=traces[0].alpha.copy(),
        mean_sq_dist=mean_sq,
        se_sq_dist=se_sq,
        mean_F_gap=mean_gap,
        se_F_gap=se_gap,
        mean_train_loss=mean_loss,
        se_train_loss=se_loss,
        mean_train_loss_avg=mean_loss_avg,
        test_acc_mean=acc_avg,
        test_acc_local_mean=acc_loc,
        comm_rounds_mean=comm,
        n_seeds=len(traces),
        bound=bound,
        constants=constants,
        spec=spec or {},
    )


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _resolve_alpha1(spec: ExperimentSpec, problem: FLProblem) -> float:
    if spec.alpha1 == "auto":
        if problem.mu <= 0:
            raise ValueError("alpha1='auto' needs a strongly convex problem; set alpha1 explicitly")
        return convex_cap(spec.p, problem.lam, problem.L, problem.n)
    return float(spec.alpha1)


def _bound_curve(
    spec: ExperimentSpec,
    problem: FLProblem,
    constants: ConstantsReport | None,
    sol: ExactSolution | None,
    alpha1: float,
    grid: np.ndarray,
    x1: ModelVector,
):
    """Worst-case curve for constant-step runs on quadratic problems."""
    if spec.algo not in ("l2gdv", "l2gd") or spec.theta != 0.0:
        return None
    if constants is None or sol is None:
        return None
    if problem.mu > 0 and constants.sigma_sq is not None:
        init = float(((x1.parts - sol.x_star.parts) ** 2).sum())
        return bound_convex_fixed(grid, alpha1, constants, init)
    if constants.mu_pl and constants.sigma_m_sq is not None:
        from .objectives import F_value

        init_gap = F_value(problem, x1) - sol.F_star
        return bound_pl_fixed(grid, alpha1, constants, init_gap)
    return None


def _run_baseline_seed(args):
    kind, ds, part, spec_kwargs, seed, eval_data = args
    runner = run_fedavg if kind == "fedavg" else run_fedprox
    try:
        return runner(ds, part, seed=seed, eval_data=eval_data, **spec_kwargs)
    except Exception as exc:
        raise RuntimeError(f"seed {seed}: {exc}") from exc


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> AggregateTrace:
    """Build, run all seeds, and aggregate one experiment."""
    problem, ds, part, eval_data = build_problem(spec)

    if spec.algo in ("fedavg", "fedprox"):
        if ds is None:
            raise ValueError("baselines need a data-backed problem")
        kwargs = dict(
            rounds=spec.rounds,
            local_epochs=spec.local_epochs,
            client_fraction=spec.client_fraction,
            lr=spec.lr,
            l2=spec.l2,
            intercept=spec.intercept,
            record_every=spec.record_every,
        )
        if spec.algo == "fedprox":
            kwargs["prox_mu"] = spec.prox_mu
        tasks = [(spec.algo, ds, part, kwargs, s, eval_data) for s in spec.seeds]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                traces = list(pool.map(_run_baseline_seed, tasks))
        else:
            traces = [_run_baseline_seed(t) for t in tasks]
        return aggregate(traces, spec=spec.to_dict())

    sol = None
    constants = None
    if problem.quadratic_stack() is not None:
        sol = solve_exact(problem)
        constants = constants_report(problem, spec.p, sol=sol)

    alpha1 = _resolve_alpha1(spec, problem)
    theta = spec.theta if spec.algo == "l2gdv" else 0.0
    config = RunConfig(
        p=spec.p,
        schedule=StepSchedule(alpha1=alpha1, theta=theta),
        K=spec.K,
        record_every=spec.record_every,
    )
    if spec.start == "solution":
        if sol is None:
            raise ValueError("start='solution' needs an exactly solvable problem")
        x1 = sol.x_star
    else:
        x1 = ModelVector.zeros(problem.n, problem.d)

    traces = run_l2gdv_batch(problem, config, spec.seeds, oracle=sol, eval_data=eval_data, x1=x1)
    grid = traces[0].ks
    bound = _bound_curve(spec, problem, constants, sol, alpha1, grid, x1)
    return aggregate(traces, bound=bound, constants=constants, spec=spec.to_dict())


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def emit_csv(agg: AggregateTrace, path) -> None:
    """Fixed-schema CSV; numbers keep full double precision, gaps are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bound = agg.bound if agg.bound is not None else [None] * agg.ks.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for j in range(agg.ks.size):
            writer.writerow(
                [
                    int(agg.ks[j]),
                    _fmt(agg.alpha[j]),
                    _fmt(agg.mean_sq_dist[j]),
                    _fmt(agg.se_sq_dist[j]),
                    _fmt(agg.mean_F_gap[j]),
                    _fmt(agg.se_F_gap[j]),
                    _fmt(bound[j] if bound is not None else None),
                    _fmt(agg.comm_rounds_mean[j]),
                    _fmt(agg.test_acc_mean[j]),
                ]
            )


def emit_json(agg: AggregateTrace, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(agg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
