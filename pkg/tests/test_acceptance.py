"""Acceptance battery: one test per shipped criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the one-line
PASS/FAIL report per criterion (also available via ``l2gdv verify``).
Everything here is deterministic; tolerances and fit windows are fixed
inside `l2gdv.acceptance`.
"""

from l2gdv import acceptance


def _check(fn):
    result = fn()
    print(result.line())
    assert result.passed, result.line()
    return result


def test_criterion_01_unbiased_gradient():
    _check(acceptance.criterion_1_unbiasedness)


def test_criterion_02_exact_oracle_residual():
    _check(acceptance.criterion_2_exact_oracle)


def test_criterion_03_convex_fixed_step_bound():
    _check(acceptance.criterion_3_convex_fixed_bound)


def test_criterion_04_variance_floor_vs_decay():
    _check(acceptance.criterion_4_variance_floor_vs_decay)


def test_criterion_05_convex_rate_exponents():
    _check(acceptance.criterion_5_convex_rate_exponents)


def test_criterion_06_theta_one_regime():
    _check(acceptance.criterion_6_theta_one_regime)


def test_criterion_07_pl_bound_and_decay():
    _check(acceptance.criterion_7_pl_setting)


def test_criterion_08_second_moment_lemmas():
    _check(acceptance.criterion_8_second_moment_bounds)


def test_criterion_09_exponential_inequality():
    _check(acceptance.criterion_9_exponential_inequality)


def test_criterion_10_communication_accounting():
    _check(acceptance.criterion_10_communication_accounting)


def test_criterion_11_end_to_end_logistic():
    _check(acceptance.criterion_11_end_to_end_logistic)


def test_run_all_subset_selection():
    results = acceptance.run_all(only=[9, 10])
    assert [r.cid for r in results] == [9, 10]
    assert all(r.passed for r in results)
