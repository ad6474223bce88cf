"""Acceptance gate: every verification criterion must hold at its stated tolerance.

Runs the full criterion suite once and asserts each verdict separately, so a
`pytest -v tests/test_acceptance.py` shows one pass/fail line per criterion.
"""

import pytest

from ordergap.harness.verify import run_suite

CRITERIA = [
    "noiseless-geometric-decay",
    "noiseless-stopping-bound",
    "noisy-stopping-statistics",
    "effective-equilibrium",
    "bandit-analytic-commutator",
    "bandit-gramian-coverage",
    "actor-critic-rank-structure",
    "rlm-coverage-and-decay",
    "sgd-zero-gap-baseline",
    "state-dependent-stopping",
    "determinism",
]


@pytest.fixture(scope="module")
def suite_results():
    results = {r.name: r for r in run_suite("all", quiet=True)}
    for name, r in results.items():
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {name}: measured={r.measured:.6g} bound={r.bound:.6g} ({r.seconds:.1f}s)")
    return results


def test_suite_covers_exactly_the_stated_criteria(suite_results):
    assert sorted(suite_results) == sorted(CRITERIA)


@pytest.mark.parametrize("name", CRITERIA)
def test_criterion(name, suite_results):
    r = suite_results[name]
    assert r.passed, f"{name}: measured={r.measured!r} bound={r.bound!r} detail={r.detail}"
    if r.limit is not None:
        assert r.seconds <= r.limit, f"{name}: took {r.seconds:.1f}s, limit {r.limit:.0f}s"
