import numpy as np
import pytest

from pscca.model import canonical_correlations_lowrank
from pscca.sampler import ChainConfig, PosteriorDraws
from pscca.summaries import (
    CorrelationSummary,
    export_heatmap_grid,
    read_heatmap_grid,
    summarize_cca,
    summarize_correlations,
)


def draws_from(w1, w2, s1, s2):
    """Params-mode draws holding the given loading and noise stacks."""
    w1, w2 = np.asarray(w1, float), np.asarray(w2, float)
    s1, s2 = np.asarray(s1, float), np.asarray(s2, float)
    n, d1, d = w1.shape
    d2 = w2.shape[1]
    cc = np.array([canonical_correlations_lowrank(*args) for args in zip(w1, w2, s1, s2)])
    return PosteriorDraws(config=ChainConfig(n_iter=n + 1, burn_in=1, n_chains=1),
                          dims=(d1, d2, 1, d), mode="params",
                          chain_ids=np.zeros(n, dtype=int),
                          arrays={"w1": w1, "w2": w2, "sigma2_1": s1, "sigma2_2": s2,
                                  "canonical": cc},
                          theta_mean=(None, None))


def random_draws(rng, n=200, d1=3, d2=4, d=2):
    return draws_from(rng.standard_normal((n, d1, d)), rng.standard_normal((n, d2, d)),
                      rng.uniform(0.2, 2.0, n), rng.uniform(0.2, 2.0, n))


def naive_cross_corr(w1, w2, s1, s2):
    out = np.empty((w1.shape[0], w2.shape[0]))
    for i in range(w1.shape[0]):
        for j in range(w2.shape[0]):
            out[i, j] = w1[i] @ w2[j] / np.sqrt((w1[i] @ w1[i] + s1) * (w2[j] @ w2[j] + s2))
    return out


def sorted_quantile(values, p):
    """Type-7 quantile by explicit sorting and linear interpolation."""
    v = np.sort(values)
    h = (len(v) - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


class TestSummarizeCorrelations:
    def test_single_draw(self, rng):
        draws = random_draws(rng, n=1)
        s = summarize_correlations(draws)
        w1, w2, s1, s2 = draws.loading_draws()
        expect = naive_cross_corr(w1[0], w2[0], s1[0], s2[0])
        np.testing.assert_allclose(s.mean, expect, atol=1e-12)
        np.testing.assert_array_equal(s.lower, s.mean)
        np.testing.assert_array_equal(s.upper, s.mean)

    def test_zero_loadings(self):
        draws = draws_from(np.zeros((5, 2, 1)), np.zeros((5, 3, 1)), np.ones(5), np.ones(5))
        s = summarize_correlations(draws)
        assert np.all(s.mean == 0) and np.all(s.lower == 0) and np.all(s.upper == 0)
        np.testing.assert_array_equal(summarize_cca(draws, 2).means, 0.0)

    def test_mean_and_bounds_oracle(self, rng):
        draws = random_draws(rng, n=101)
        s = summarize_correlations(draws, level=0.9)
        per = np.array([naive_cross_corr(*a) for a in zip(*draws.loading_draws())])
        for i in range(3):
            for j in range(4):
                v = per[:, i, j]
                assert s.mean[i, j] == pytest.approx(v.mean(), abs=1e-12)
                lo = min(sorted_quantile(v, 0.05), v.mean())
                hi = max(sorted_quantile(v, 0.95), v.mean())
                assert s.lower[i, j] == pytest.approx(lo, abs=1e-12)
                assert s.upper[i, j] == pytest.approx(hi, abs=1e-12)

    def test_bounds_contain_mean(self, rng):
        s = summarize_correlations(random_draws(rng))
        assert np.all(s.lower <= s.mean) and np.all(s.mean <= s.upper)
        assert np.all(s.lower >= -1) and np.all(s.upper <= 1)

    def test_level_monotone(self, rng):
        draws = random_draws(rng)
        narrow = summarize_correlations(draws, level=0.5)
        wide = summarize_correlations(draws, level=0.95)
        assert np.all(wide.lower <= narrow.lower) and np.all(wide.upper >= narrow.upper)

    def test_feature_permutation(self, rng):
        draws = random_draws(rng)
        w1, w2, s1, s2 = draws.loading_draws()
        p1, p2 = np.array([2, 0, 1]), np.array([3, 1, 0, 2])
        base = summarize_correlations(draws)
        perm = summarize_correlations(draws_from(w1[:, p1], w2[:, p2], s1, s2))
        np.testing.assert_allclose(perm.mean, base.mean[np.ix_(p1, p2)], atol=1e-12)
        np.testing.assert_allclose(perm.upper, base.upper[np.ix_(p1, p2)], atol=1e-12)

    @pytest.mark.parametrize("level", [0.0, 1.0, -0.2])
    def test_invalid_level(self, rng, level):
        with pytest.raises(ValueError):
            summarize_correlations(random_draws(rng, n=3), level=level)

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize_correlations(draws_from(np.zeros((0, 2, 1)), np.zeros((0, 2, 1)),
                                              np.zeros(0), np.zeros(0)))


class TestSummarizeCca:
    def test_descending_and_bounded(self, rng):
        s = summarize_cca(random_draws(rng, d1=4, d2=5, d=3), 4)
        assert s.k == 4
        assert np.all(np.diff(s.means) <= 1e-12)
        assert np.all(s.lower >= 0) and np.all(s.upper <= 1)
        assert s.means[3] == 0.0

    def test_two_draw_hand_case(self):
        # one factor, one feature per view: rho = w1 w2 / sqrt((w1^2+1)(w2^2+1))
        w1 = np.array([[[1.0]], [[2.0]]])
        w2 = np.array([[[1.0]], [[0.5]]])
        draws = draws_from(w1, w2, np.ones(2), np.ones(2))
        rho = np.array([0.5, 1.0 / np.sqrt(5 * 1.25)])  # 0.5 and 0.4
        s = summarize_cca(draws, 1, level=0.5)
        assert s.means[0] == pytest.approx(rho.mean(), abs=1e-12)
        assert s.lower[0] == pytest.approx(0.4 + 0.25 * 0.1, abs=1e-12)
        c = summarize_correlations(draws)
        assert c.mean[0, 0] == pytest.approx(rho.mean(), abs=1e-12)

    def test_k_out_of_range(self, rng):
        with pytest.raises(ValueError):
            summarize_cca(random_draws(rng), 4)


class TestHeatmapGrid:
    def test_single_pair(self, tmp_path):
        s = CorrelationSummary(mean=np.array([[0.25]]), lower=np.array([[0.0]]),
                               upper=np.array([[0.5]]), level=0.95)
        path = export_heatmap_grid(s, tmp_path / "grid.csv")
        assert path.read_bytes() == b"feature_1,feature_2,mean,lower,upper\nx1,y1,0.25,0.0,0.5\n"

    def test_row_major(self, tmp_path):
        mean = np.arange(6.0).reshape(2, 3) / 10
        s = CorrelationSummary(mean=mean, lower=mean - 0.1, upper=mean + 0.1, level=0.9,
                               feature_names_1=["a", "b"], feature_names_2=["p", "q", "r"])
        lines = export_heatmap_grid(s, tmp_path / "g.csv").read_text().splitlines()
        assert len(lines) == 7
        assert [ln.split(",")[:2] for ln in lines[1:]] == [
            ["a", "p"], ["a", "q"], ["a", "r"], ["b", "p"], ["b", "q"], ["b", "r"]]
        assert float(lines[5].split(",")[2]) == mean[1, 1]

    def test_round_trip(self, rng, tmp_path):
        s = summarize_correlations(random_draws(rng))
        back = read_heatmap_grid(export_heatmap_grid(s, tmp_path / "g.csv"))
        np.testing.assert_array_equal(back.mean, s.mean)
        np.testing.assert_array_equal(back.lower, s.lower)
        np.testing.assert_array_equal(back.upper, s.upper)
        assert back.feature_names_2 == ["y1", "y2", "y3", "y4"]

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_heatmap_grid(p)
