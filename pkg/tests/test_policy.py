import numpy as np
import pytest
from scipy import integrate, stats

from bitrnf import lrs
from bitrnf.distributions import BaseParams, log_pdf, map_dof
from bitrnf.policy import (ConditionerConfig, conditioner_forward, density_grid, init_params,
                           make_distribution, zero_params)
from bitrnf.verify import random_bit_rnf, random_tables


def cfg(kind="bit_rnf", D=2, S=3, **kw):
    base = dict(state_dim=S, action_dim=D, kind=kind, tau=0.8, trunk_depth=2, trunk_width=16,
                head_depth=1, head_width=8)
    base.update(kw)
    return ConditionerConfig(**base)


def test_config_validation_and_full_shapes():
    with pytest.raises(ValueError):
        cfg(kind="beta")
    with pytest.raises(ValueError):
        cfg(kind="gmm", components=1)
    c = cfg(full_shapes=True)
    assert c.trunk == (5, 100) and c.flow_head == (2, 32)
    assert c.hyper.K == 16 and c.hyper.c == 4.0


def test_zero_params_give_identity_flow_and_plain_base():
    c = cfg()
    dist = conditioner_forward(np.random.default_rng(0).normal(size=(4, 3)), zero_params(c).arrays(), c)
    np.testing.assert_array_equal(dist.scale, 1.0)
    np.testing.assert_array_equal(dist.weights, 0.5)
    np.testing.assert_array_equal(dist.dof, map_dof(0.0, 2))
    assert dist.dof[0, 0] == 2.0 / 0.25 - 2
    eps = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(lrs.forward(np.broadcast_to(eps[:, None, None], (17, 4, 2)),
                                           dist.table), np.broadcast_to(eps[:, None, None], (17, 4, 2)),
                               atol=1e-14)


def test_conditioner_is_deterministic_and_checks_states():
    c = cfg()
    p = init_params(c, np.random.default_rng(1)).arrays()
    s = np.array([0.3, -0.2, 1.0])
    a, b = conditioner_forward(s, p, c), conditioner_forward(s, p, c)
    for f in ("loc", "scale", "weights", "dof"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    with pytest.raises(ValueError):
        conditioner_forward(np.array([np.nan, 0, 0]), p, c)
    with pytest.raises(ValueError):
        conditioner_forward(np.zeros(2), p, c)


def test_table_invariants_over_many_states():
    c = cfg(D=3)
    p = init_params(c, np.random.default_rng(2), out_scale=3.0).arrays()
    dist = conditioner_forward(np.random.default_rng(3).normal(0, 3, (1000, 3)), p, c)
    assert lrs.table_violations(dist.table) == []
    assert np.all(dist.dof > 3)


def test_mean_ignores_flow_parameters_bitwise():
    c = cfg()
    rng = np.random.default_rng(4)
    store = init_params(c, rng)
    s = rng.normal(size=(5, 3))
    m0 = conditioner_forward(s, store.arrays(), c).mean()
    perturbed = store.copy()
    for name in perturbed.names():
        if name.startswith("flow."):
            perturbed[name] = perturbed[name] + rng.normal(0, 5, perturbed[name].shape)
    d1 = conditioner_forward(s, perturbed.arrays(), c)
    assert lrs.table_violations(d1.table) == []
    np.testing.assert_array_equal(d1.mean(), m0)


def test_mean_examples():
    table = random_tables(np.random.default_rng(5), 0.8, 1)
    one = make_distribution("bit_rnf", [[0.7], [3.0]], [[1.0], [1.0]], [1.0, 0.0], 4.0, table)
    assert one.mean()[0, 0] == 0.7
    mix = make_distribution("bit", [[1.0], [-2.0]], [[1.0], [1.0]], [0.3, 0.7], 4.0)
    assert mix.mean()[0, 0] == pytest.approx(-1.1, abs=1e-15)


def test_identity_flow_reduces_to_student_t():
    h = lrs.derive_hyper(0.8)
    dist = make_distribution("bit_rnf", [[0.4], [2.0]], [[1.3], [1.0]], [1.0, 0.0], 3.0,
                             lrs.identity_table(h, (1,)))
    a = np.linspace(-6, 6, 41)[:, None, None]
    want = log_pdf(a[:, 0, :], BaseParams([0.4], [1.3], 3.0), "student_t")
    np.testing.assert_allclose(dist.log_prob(a)[:, 0], want, atol=1e-12)
    grid, pdf, _ = density_grid(dist, 0, -6, 6, 41)
    np.testing.assert_allclose(pdf, np.exp(want), atol=1e-12)
    x = dist.sample(np.random.default_rng(6), 100_000)[:, 0, 0]
    assert stats.kstest(x, lambda v: stats.t.cdf(v, 3.0, 0.4, 1.3)).pvalue > 0.001


def test_zero_weight_component_never_flows():
    table = random_tables(np.random.default_rng(7), 0.8, 1)
    dist = make_distribution("bit_rnf", [[5.0], [0.0]], [[1.0], [1.0]], [0.0, 1.0], 4.0, table)
    flowless = make_distribution("bit", [[5.0], [0.0]], [[1.0], [1.0]], [0.0, 1.0], 4.0)
    np.testing.assert_array_equal(dist.sample(np.random.default_rng(8), 1000),
                                  flowless.sample(np.random.default_rng(8), 1000))


def test_pure_rnf_component_is_symmetric():
    rng = np.random.default_rng(9)
    for _ in range(5):
        table = random_tables(rng, 0.8, 1, raw_scale=3.0)
        dist = make_distribution("bit_rnf", [[0.6], [-1.0]], [[0.8], [1.0]], [1.0, 0.0], 3.5, table)
        delta = np.linspace(0, 5, 51)
        up = dist.log_prob((0.6 + delta)[:, None, None])
        down = dist.log_prob((0.6 - delta)[:, None, None])
        np.testing.assert_allclose(up, down, atol=1e-12)


def test_log_prob_finite_on_own_samples():
    rng = np.random.default_rng(10)
    for extreme in (False, True):
        dist = random_bit_rnf(rng, 2, extreme=extreme)
        a = dist.sample(rng, 100_000)
        assert np.all(np.isfinite(dist.log_prob(a)))


def test_one_dimensional_density_normalizes():
    rng = np.random.default_rng(11)
    for _ in range(3):
        dist = random_bit_rnf(rng, 1)
        loc = np.asarray(dist.loc)[0, :, 0]
        scale = np.asarray(dist.scale)[0, :, 0]
        lo, hi = (loc - 60 * scale).min(), (loc + 60 * scale).max()
        _, pdf, contrib = density_grid(dist, 0, lo, hi, 200_001)
        np.testing.assert_allclose(contrib.sum(axis=1), pdf, rtol=1e-12)
        mass = integrate.trapezoid(pdf, dx=(hi - lo) / 200_000)
        assert abs(mass - 1.0) <= 1e-2


def test_density_grid_rejects_bad_arguments():
    dist = random_bit_rnf(np.random.default_rng(12), 2)
    with pytest.raises(ValueError):
        density_grid(dist, 0, 1.0, -1.0, 10)
    with pytest.raises(IndexError):
        density_grid(dist, 2, -1.0, 1.0, 10)


def test_samples_match_density_histogram():
    rng = np.random.default_rng(13)
    dist = random_bit_rnf(rng, 1)
    x = dist.sample(rng, 1_000_000)[:, 0, 0]
    edges = np.quantile(x, np.linspace(0, 1, 41))
    edges[0], edges[-1] = -np.inf, np.inf
    f = lambda v: np.exp(dist.log_prob(np.array([[[v]]]))[0, 0])
    expected = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        expected.append(integrate.quad(f, lo, hi, limit=200)[0])
    expected = np.array(expected) / np.sum(expected) * len(x)
    observed, _ = np.histogram(x, edges)
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_normal_kind_parity():
    c = cfg(kind="normal")
    rng = np.random.default_rng(14)
    p = init_params(c, rng).arrays()
    s = rng.normal(size=(6, 3))
    dist = conditioner_forward(s, p, c)
    assert dist.table is None and dist.dof is None
    a = rng.normal(size=(6, 2))
    loc, scale = dist.loc[:, 0, :], dist.scale[:, 0, :]
    want = [log_pdf(a[i], BaseParams(loc[i], scale[i]), "normal") for i in range(6)]
    np.testing.assert_allclose(dist.log_prob(a), want, atol=1e-13)
    np.testing.assert_array_equal(dist.mean(), loc)


@pytest.mark.parametrize("kind,M", [("student", 1), ("gmm", 16), ("bit", 2), ("rnf", 1)])
def test_other_kinds_shapes(kind, M):
    c = cfg(kind=kind)
    rng = np.random.default_rng(15)
    dist = conditioner_forward(rng.normal(size=(4, 3)), init_params(c, rng).arrays(), c)
    assert dist.loc.shape == (4, M, 2)
    np.testing.assert_allclose(dist.weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.isfinite(dist.log_prob(dist.sample(rng, 10))))
    assert (dist.table is not None) == (kind == "rnf")
