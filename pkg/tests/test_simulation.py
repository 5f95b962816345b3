import math

import numpy as np
import pytest

from pscca.baselines import pearson
from pscca.exceptions import DimensionError, DomainError
from pscca.model import CountDatasetPair, cross_correlation, joint_covariance
from pscca.sampler import ChainConfig
from pscca.simulation import (
    LossTable,
    ScenarioSpec,
    frobenius_loss,
    generate,
    run_comparison,
    stein_loss,
    verify_shrinkage,
)


def random_spd(rng, p):
    a = rng.standard_normal((p, p))
    return a @ a.T + 0.5 * np.eye(p)


def loop_frobenius(u, v):
    total = 0.0
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            total += (u[i, j] - v[i, j]) ** 2
    return total


def eigen_stein(u, v):
    w, q = np.linalg.eigh(v)
    v_isqrt = q @ np.diag(w ** -0.5) @ q.T
    e = np.linalg.eigvalsh(v_isqrt @ u @ v_isqrt)
    return float(np.sum(e - np.log(e) - 1.0))


class TestScenarioSpec:
    def test_defaults(self):
        one, two = ScenarioSpec("I"), ScenarioSpec("II")
        assert (one.D1, one.D2, one.N, one.d_true, one.sigma2) == (10, 30, 50, 5, 1.0)
        assert (two.D1, two.D2, two.N, two.d_true, two.cov_model) == (60, 60, 100, 10, "identity")

    @pytest.mark.parametrize("kw", [dict(scenario="III"), dict(cov_model="identity"),
                                    dict(scenario="II", cov_model="diagonal"),
                                    dict(d_true=11), dict(N=1), dict(sigma2=0.0),
                                    dict(scenario="II", d_true=0),
                                    dict(scenario="II", cov_model="moderate", sigma2=0.6)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ScenarioSpec(**kw)


class TestGenerate:
    def test_null_truth(self):
        sim = generate(ScenarioSpec("I", d_true=0, seed=3))
        assert sim.true_state.w1.shape == (10, 0)
        np.testing.assert_array_equal(sim.true_cross_corr, 0.0)
        np.testing.assert_array_equal(sim.true_cca, 0.0)

    def test_deterministic(self):
        a, b = generate(ScenarioSpec("I", seed=11)), generate(ScenarioSpec("I", seed=11))
        np.testing.assert_array_equal(a.data.y1, b.data.y1)
        np.testing.assert_array_equal(a.data.y2, b.data.y2)
        c = generate(ScenarioSpec("I", seed=12))
        assert not np.array_equal(a.data.y1, c.data.y1)

    def test_truth_single_source(self):
        for spec in (ScenarioSpec("I", seed=1), ScenarioSpec("II", cov_model="moderate")):
            sim = generate(spec)
            np.testing.assert_array_equal(sim.true_cross_corr, cross_correlation(sim.true_state))
            sim.true_state.validate()
            assert np.all(np.diff(sim.true_cca) <= 1e-12)

    def test_theta_covariance(self):
        sim = generate(ScenarioSpec("I", d_true=5, N=10_000, seed=2))
        s = sim.true_state
        theta = np.vstack([s.theta1, s.theta2])
        emp = np.cov(theta)
        truth = joint_covariance(s).sigma
        assert np.linalg.norm(emp - truth) / np.linalg.norm(truth) < 0.05

    @pytest.mark.parametrize("model", ["independent", "identity", "moderate"])
    def test_scenario_two_models(self, model):
        sim = generate(ScenarioSpec("II", cov_model=model, D1=12, D2=14, d_true=4))
        cov = joint_covariance(sim.true_state).sigma
        v1 = cov[:12, :12]
        if model == "independent":
            np.testing.assert_allclose(v1 - np.diag(np.diag(v1)), 0.0, atol=1e-12)
        else:
            np.testing.assert_allclose(np.diag(cov), 1.0, atol=1e-12)
        if model == "moderate":
            off = v1[~np.eye(12, dtype=bool)]
            assert abs(np.mean(off) - 0.5) < 0.1

    def test_overflow_guard(self):
        with pytest.raises(DomainError):
            generate(ScenarioSpec("I", mu_mean=45.0))


class TestFrobeniusLoss:
    def test_hand_cases(self):
        u = np.arange(6.0).reshape(2, 3)
        assert frobenius_loss(u, u) == 0.0
        assert frobenius_loss(u + 1.0, u) == 6.0

    def test_loop_oracle(self, rng):
        for _ in range(100):
            shape = tuple(rng.integers(1, 8, size=2))
            u, v = rng.standard_normal(shape), rng.standard_normal(shape)
            assert abs(frobenius_loss(u, v) - loop_frobenius(u, v)) < 1e-10

    def test_symmetry_and_scaling(self, rng):
        u, v = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        assert frobenius_loss(u, v) == pytest.approx(frobenius_loss(v, u), rel=1e-14)
        assert frobenius_loss(3 * u, 3 * v) == pytest.approx(9 * frobenius_loss(u, v), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            frobenius_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestSteinLoss:
    def test_closed_form(self):
        expect = 2 * 2 - 2 * math.log(2) - 2
        assert stein_loss(2 * np.eye(2), np.eye(2)) == pytest.approx(expect, abs=1e-14)
        assert expect == pytest.approx(0.6137, abs=1e-4)

    def test_equal_inputs(self, rng):
        a = random_spd(rng, 5)
        assert abs(stein_loss(a, a)) < 1e-12

    def test_eigen_oracle(self, rng):
        for _ in range(100):
            p = int(rng.integers(1, 8))
            u, v = random_spd(rng, p), random_spd(rng, p)
            assert abs(stein_loss(u, v) - eigen_stein(u, v)) < 1e-10 * max(1.0, eigen_stein(u, v))

    def test_nonnegative(self, rng):
        for _ in range(50):
            assert stein_loss(random_spd(rng, 4), random_spd(rng, 4)) >= 0

    @pytest.mark.parametrize("bad", [np.array([[1.0, 2.0], [2.0, 1.0]]),
                                     np.array([[1.0, 0.5], [0.0, 1.0]])])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            stein_loss(bad, np.eye(2))
        with pytest.raises(DomainError):
            stein_loss(np.eye(2), bad)

    def test_shape(self):
        with pytest.raises(DimensionError):
            stein_loss(np.eye(2), np.eye(3))


class TestVerifyShrinkage:
    def test_requires_signal(self):
        with pytest.raises(ValueError):
            verify_shrinkage(ScenarioSpec("I", d_true=0), 1)

    def test_strong_signal(self):
        report = verify_shrinkage(ScenarioSpec("I", d_true=5, N=1000, loading_scale=2.0), 3)
        assert report.dominance_fraction > 0.9
        assert report.mean_abs_raw < report.mean_abs_natural
        assert report.n_pairs == 3 * 10 * 30

    def test_single_pair(self):
        # w = 2, sigma2 = 1 on both sides gives natural-parameter correlation 4/5
        rng = np.random.default_rng(7)
        z = rng.standard_normal(10_000)
        t1 = 2 * z + rng.standard_normal(10_000)
        t2 = 2 * z + rng.standard_normal(10_000)
        data = CountDatasetPair(rng.poisson(np.exp(t1))[None], rng.poisson(np.exp(t2))[None])
        assert 0.8 - abs(pearson(data).corr[0, 0]) > 0.02

    def test_monotone_in_count_magnitude(self):
        fractions = [verify_shrinkage(ScenarioSpec("I", d_true=5, N=200, mu_mean=m, seed=4), 10)
                     .dominance_fraction for m in (-2.0, 0.5, 3.0)]
        assert fractions[0] >= fractions[1] >= fractions[2]


class TestRunComparison:
    def test_pearson_composition(self):
        spec = ScenarioSpec("I", d_true=0, seed=9)
        table = run_comparison(spec, ["pearson"], ChainConfig(n_iter=2, burn_in=1), n_rep=1)
        sim = generate(spec)
        expect = frobenius_loss(np.zeros((10, 30)), pearson(sim.data).corr)
        assert table.values("pearson", "corr_frobenius")[0] == expect
        assert len(table.rows) == 1
        with_stein = run_comparison(spec, ["pearson"], ChainConfig(n_iter=2, burn_in=1),
                                    n_rep=1, stein=True)
        assert {r[4] for r in with_stein.rows} == {"corr_frobenius", "joint_stein"}

    def test_pscca_metrics(self):
        spec = ScenarioSpec("I", d_true=1, D1=3, D2=4, N=30, seed=2)
        table = run_comparison(spec, ["pscca", "sample_cca"],
                               ChainConfig(n_iter=60, burn_in=30), n_rep=2, stein=True)
        assert len(table.values("pscca", "corr_frobenius")) == 2
        assert np.all(np.isfinite(table.values("pscca", "joint_stein")))
        assert len(table.values("sample_cca", "cca_frobenius")) == 2
        assert all(r[:2] == ("I", "d1") for r in table.rows)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_comparison(ScenarioSpec("I"), ["lasso"], ChainConfig(n_iter=2, burn_in=1))

    def test_aggregate(self):
        table = LossTable()
        spec = ScenarioSpec("I")
        for r, v in enumerate([1.0, 2.0, 3.0, 4.0]):
            table.add(spec, "pearson", r, "corr_frobenius", v)
        table.add(spec, "pearson", 4, "joint_stein", math.nan)
        (row,) = table.aggregate()
        assert row["mean"] == 2.5 and row["median"] == 2.5 and row["n"] == 4
        assert row["se"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert row["lower"] == pytest.approx(np.quantile([1, 2, 3, 4], 0.025))
