"""Desk-scale lab for consensus-regularized federated optimization.

The objective is F(x) = (1/n) sum_i f_i(x_i) + lam * psi(x), where psi
penalizes disagreement between the clients' local models.  The optimizer
family draws one Bernoulli(p) coin per iteration to take either a local
gradient step or a move toward the average, with a step sequence
alpha_k = alpha1 * k^(-theta); communications are counted only when the
coin switches from local work to aggregation.

The package pairs the optimizer with exactly solvable problem generators,
the curvature constants and worst-case bounds that govern it, rate
fitting, and an experiment harness (`l2gdv` on the command line).
"""

from .models import LocalModel, ModelVector, average, psi_grad, psi_value
from .objectives import (
    FLProblem,
    LogisticClient,
    QuadraticClient,
    F_grad,
    F_value,
    central_diff_grad,
    f_grad,
    f_value,
    finite_diff_check,
    make_pl_problem,
    make_strongly_convex_problem,
    reference_gd,
)
from .schedules import StepSchedule, calligraphic_L, convex_cap, pl_cap, zeta
from .theory import (
    ConstantsReport,
    ExactSolution,
    RateRegime,
    bound_convex_fixed,
    bound_pl_fixed,
    bound_rate_exponent,
    constants_report,
    distance_to_solution_set,
    expected_error_curve,
    fit_rate,
    hessian_F,
    exp_power_inequality_holds,
    measure_mu_pl,
    sigma_m_profile,
    sigma_m_sq,
    sigma_sq,
    sigma_x_sq,
    solve_exact,
)
from .optimizer import (
    RunConfig,
    StepCapWarning,
    Trace,
    count_communication_rounds,
    l2gdv_step,
    run_fedavg,
    run_fedprox,
    run_l2gd,
    run_l2gdv,
    run_l2gdv_batch,
    stochastic_gradient,
)
from .dataio import (
    Dataset,
    Partition,
    binarize,
    design_matrix,
    load_idx,
    partition_iid,
    partition_noniid,
    synth_gaussian_classes,
)
from .harness import (
    AggregateTrace,
    ExperimentSpec,
    aggregate,
    emit_csv,
    emit_json,
    load_config,
    problem_from_dataset,
    run_experiment,
)
from .acceptance import CheckResult, run_all

__version__ = "0.1.0"
