"""Acceptance criteria, one test per criterion.

Each test runs the matching verification suites and prints a single
``[PASS]``/``[FAIL]`` line with the worst measured quantity, so the outcome
is visible in ``pytest -v`` output even though pytest captures stdout.
"""

import pytest

from pfd import verify

CRITERIA = [
    (1, "influence correctness", ["influence"]),
    (2, "chain rule", ["chain_rule"]),
    (3, "Fenchel-Moreau duality", ["duality"]),
    (4, "optimal discriminator", ["discriminator"]),
    (5, "exact transport", ["transport"]),
    (6, "GAN presets as descent", ["gan"]),
    (7, "VI presets", ["vi"]),
    (8, "RL exactness", ["rl"]),
    (9, "policy iteration", ["policy_iteration"]),
    (10, "dual actor-critic", ["dual_actor_critic"]),
    (11, "estimator unbiasedness", ["estimators"]),
    (12, "determinism", ["determinism"]),
]


@pytest.mark.parametrize("number, title, suites", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, title, suites, capsys):
    results = verify.run_suites(suites)
    failed = [r for r in results if not r.passed]
    status = "FAIL" if failed else "PASS"
    detail = "; ".join(f"{r.name}={r.measured:.3g}<={r.threshold:.0e}" for r in results)
    with capsys.disabled():
        print(f"\n[{status}] criterion {number} ({title}): {detail}")
    assert not failed, "\n".join(r.line() for r in failed)
