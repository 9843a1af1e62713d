from dataclasses import replace

import numpy as np
import pytest

from bitrnf import verify
from bitrnf.verify import (CheckReport, LipschitzBound, check_flow, check_flow_negative_control,
                           check_gradients, check_mean, check_normalization, integrate_density,
                           random_bit_rnf, run_suite, suite_passed)


def test_report_pass_rule_and_dict():
    r = CheckReport("x", 10, 1, 2.0, 1.0)
    assert not r.passed
    assert replace(r, allowed_failures=1).passed
    d = replace(r, allowed_failures=1).to_dict()
    assert d["pass"] and d["allowed_failures"] == 1
    assert set(CheckReport("y", 1, 0, 0.0, 1.0).to_dict()) == {
        "name", "cases", "failures", "worst", "tolerance", "pass"}


def test_lipschitz_bound():
    b = LipschitzBound.from_tau(0.8)
    assert (b.lower, b.upper) == pytest.approx((0.2, 5.0))
    np.testing.assert_array_equal(b.contains([b.lower, 0.21, 4.99, b.upper]), [False, True, True, False])


def test_flow_check_passes_and_controls_fail():
    rng = np.random.default_rng(0)
    rep = check_flow(rng, 600)
    assert rep.passed and rep.cases == 600
    assert {p.name for p in rep.parts} == {f"flow.{k}" for k in verify.FLOW_TOLERANCES}
    ctrl = check_flow_negative_control(rng, 60)
    assert ctrl.passed and ctrl.info["corrupted_cases_flagged"] == 60


def test_flow_check_catches_an_injected_bug(monkeypatch):
    real = verify.lrs.forward
    monkeypatch.setattr(verify.lrs, "forward", lambda e, t: real(e, t) + 1e-9 * e ** 2)
    rep = check_flow(np.random.default_rng(1), 90)
    assert not rep.passed
    odd = next(p for p in rep.parts if p.name == "flow.oddness")
    assert odd.failures > 0


def test_normalization_and_its_control():
    rng = np.random.default_rng(2)
    assert check_normalization(rng, 3).passed
    dist = random_bit_rnf(rng, 1)
    total, _ = integrate_density(dist)
    assert abs(total - 1.0) < 1e-6
    # a 2 % heavier alternate component is not a density any more
    bad = replace(dist, weights=dist.weights * np.array([[1.0, 1.02]]))
    rep = check_normalization(rng, 2, factory=lambda r, i: bad)
    assert not rep.passed


def test_mean_check_and_its_control():
    rng = np.random.default_rng(3)
    rep = check_mean(rng, 3, samples=100_000)
    assert rep.passed and rep.allowed_failures == 0

    def shifted(r, i):
        d = random_bit_rnf(r, 2)
        # component 0 loc moved by 0.3 scales while the sampler sees the original
        wrong = replace(d, loc=d.loc + np.array([[[0.3], [0.0]]]) * d.scale)
        return _MeanOverride(d, wrong.mean())

    assert not check_mean(rng, 3, samples=100_000, factory=shifted).passed


class _MeanOverride:
    """Wraps a distribution but reports a different analytic mean."""

    def __init__(self, dist, mean):
        self._dist, self._mean = dist, mean

    def __getattr__(self, name):
        return getattr(self._dist, name)

    def mean(self):
        return self._mean


def test_allowed_failures_from_rate():
    rng = np.random.default_rng(4)
    assert check_mean(rng, 100, samples=1000, factory=lambda r, i: random_bit_rnf(r, 1)
                      ).allowed_failures == 1


def test_gradient_check_small():
    rep = check_gradients(np.random.default_rng(5), 2)
    assert rep.passed and rep.worst <= 1e-4


def test_run_suite_is_seed_deterministic():
    a = [r.to_dict() for r in run_suite("flow", seed=7, cases=300)]
    b = [r.to_dict() for r in run_suite("flow", seed=7, cases=300)]
    assert a == b
    assert suite_passed(run_suite("flow", seed=7, cases=300))
    with pytest.raises(ValueError):
        run_suite("nope")
