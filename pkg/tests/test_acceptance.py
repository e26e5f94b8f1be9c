"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints its result lines (``[PASS]``, ``[FAIL]`` or ``[INFO]``)
uncaptured, so ``pytest -v`` output carries one line per criterion. Lines
marked INFO are reported only and never fail a test.
"""

import pytest

from savfleet import acceptance


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def check(results, capsys):
    results = results if isinstance(results, list) else [results]
    with capsys.disabled():
        print()
        for r in results:
            print(r.line())
    failed = [r for r in results if r.gated and not r.passed]
    assert not failed, "; ".join(r.line() for r in failed)


def test_criterion_01_tabular_oracle_equivalence(capsys):
    check(acceptance.check_tabular_oracle(), capsys)


def test_criterion_02_q_learning_convergence(capsys):
    check(acceptance.check_q_learning(), capsys)


def test_criterion_03_maximization_bias(capsys):
    check(acceptance.check_maximization_bias(), capsys)


def test_criterion_04_gradient_exactness(capsys):
    check(acceptance.check_gradients(), capsys)


def test_criterion_05_simulator_invariants(capsys):
    check(acceptance.check_simulator(), capsys)


def test_criterion_06_reward_formula(capsys):
    check(acceptance.check_reward_formula(), capsys)


def test_criterion_07_learning_signal(capsys):
    check(acceptance.check_learning_signal(), capsys)


def test_criterion_08_action_space_comparison(capsys, report_dir):
    check([acceptance.check_improvement_arithmetic(), *acceptance.check_action_space_report(report_dir)], capsys)


def test_criterion_09_imbalance_baseline(capsys, report_dir):
    check(acceptance.check_baseline_report(report_dir), capsys)


def test_criterion_10_determinism(capsys):
    check(acceptance.check_determinism(), capsys)
