import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cogs.core import DegenerateInstanceError, NumericalFailure, batch_tour_lengths
from cogs.hac import (
    HacConfig,
    LocalSearchSurrogate,
    fixed_tour_hardness,
    fixed_tour_hardness_grad,
    gap_size_correlation,
    gradient_magnitude_stats,
    hac_step,
    hardness,
    hardness_gradient,
    pearson,
    reweight,
    tour_length_grad,
)
from cogs.policy import AttentionPolicy, PolicyConfig, RolloutBaseline


class FixedTours:
    def __init__(self, order):
        self.order = np.asarray(order)

    def tours(self, points):
        return np.broadcast_to(self.order, points.shape[:2]).copy()


def rect(w, h):
    return np.array([[[0, 0], [w, 0], [w, h], [0, h]]], dtype=np.float64)


class TestHardness:
    def test_same_tour_zero(self):
        pts = np.random.default_rng(0).random((5, 9, 2))
        t = FixedTours(np.arange(9))
        assert np.all(hardness(t, t, pts) == 0)

    def test_ratio(self):
        # rectangle whose crossing tour is exactly 1.2x its perimeter: d = 1.2 w + 0.2 h with w = 1
        h = (0.48 + math.sqrt(1.92)) / 1.92
        pts = rect(1.0, h)
        assert batch_tour_lengths(pts, np.array([[0, 2, 1, 3]]))[0] / batch_tour_lengths(pts, np.array([[0, 1, 2, 3]]))[0] == pytest.approx(1.2)
        assert hardness(FixedTours([0, 2, 1, 3]), FixedTours([0, 1, 2, 3]), pts)[0] == pytest.approx(0.2, rel=1e-12)

    def test_untrained_policy_harder_than_local_search(self):
        pts = np.random.default_rng(1).random((100, 20, 2))
        h = hardness(AttentionPolicy(PolicyConfig.toy(), seed=0), LocalSearchSurrogate(3), pts)
        assert h.mean() > 0

    def test_coincident_points(self):
        pts = np.full((2, 5, 2), 0.3)
        t = FixedTours(np.arange(5))
        with pytest.raises(DegenerateInstanceError):
            hardness(t, t, pts)

    def test_baseline_as_surrogate(self):
        p = AttentionPolicy(PolicyConfig.tiny(), seed=0)
        pts = np.random.default_rng(2).random((6, 8, 2))
        assert np.all(hardness(p, RolloutBaseline(p), pts) == 0)


class TestGradient:
    def test_tour_length_grad_fd(self):
        rng = np.random.default_rng(0)
        pts = rng.random((3, 7, 2))
        tours = np.stack([rng.permutation(7) for _ in range(3)])
        g = tour_length_grad(pts, tours)
        eps = 1e-6
        for b, i, c in [(0, 0, 0), (1, 3, 1), (2, 6, 0), (2, 2, 1)]:
            up, down = pts.copy(), pts.copy()
            up[b, i, c] += eps
            down[b, i, c] -= eps
            fd = (batch_tour_lengths(up, tours)[b] - batch_tour_lengths(down, tours)[b]) / (2 * eps)
            assert g[b, i, c] == pytest.approx(fd, rel=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_fixed_tour_hardness_fd(self, seed):
        rng = np.random.default_rng(seed)
        B, n = 4, 12
        pts = rng.random((B, n, 2))
        tm = np.stack([rng.permutation(n) for _ in range(B)])
        ts = np.stack([rng.permutation(n) for _ in range(B)])
        h, g = fixed_tour_hardness_grad(pts, tm, ts)
        np.testing.assert_allclose(h, fixed_tour_hardness(pts, tm, ts), rtol=1e-15)
        eps = 1e-6
        for b in range(B):
            for i, c in zip(rng.integers(0, n, 5), rng.integers(0, 2, 5)):
                up, down = pts.copy(), pts.copy()
                up[b, i, c] += eps
                down[b, i, c] -= eps
                fd = (fixed_tour_hardness(up, tm, ts)[b] - fixed_tour_hardness(down, tm, ts)[b]) / (2 * eps)
                assert abs(g[b, i, c] - fd) <= 1e-4 * max(abs(fd), abs(g[b, i, c])) + 1e-10

    def test_coincident_edge_contributes_zero(self):
        pts = np.array([[[0.2, 0.2], [0.2, 0.2], [0.8, 0.5]]])
        g = tour_length_grad(pts, np.array([[0, 1, 2]]))
        assert np.all(np.isfinite(g))

    def test_nonfinite_gradient(self):
        pts = np.random.default_rng(0).random((3, 5, 2))
        pts[1, 2, 0] = np.nan
        with pytest.raises(NumericalFailure) as exc:
            hardness_gradient(FixedTours([0, 2, 1, 3, 4]), FixedTours(np.arange(5)), pts)
        assert exc.value.index == 1


class TestStep:
    def setup_method(self):
        self.model = FixedTours([0, 2, 1, 4, 3, 5])
        self.sur = FixedTours(np.arange(6))
        self.pts = np.random.default_rng(3).random((16, 6, 2))

    def test_eta_zero_identity(self):
        out = hac_step(self.model, self.sur, self.pts, HacConfig(step_size=0.0))
        assert np.array_equal(out, self.pts)

    def test_clamped(self):
        out = hac_step(self.model, self.sur, self.pts, HacConfig(step_size=50.0))
        assert out.min() >= 0 and out.max() <= 1
        assert not np.array_equal(out, self.pts)

    def test_fixed_tour_ascent(self):
        cfg = HacConfig(step_size=1e-3)
        out = hac_step(self.model, self.sur, self.pts, cfg)
        before = hardness(self.model, self.sur, self.pts)
        after = hardness(self.model, self.sur, out)
        assert np.mean(after > before) >= 0.9

    def test_magnitude_stats(self):
        assert gradient_magnitude_stats(self.model, self.sur, self.pts, HacConfig(step_size=0.0)) == (0.0, 0.0)
        m1 = gradient_magnitude_stats(self.model, self.sur, self.pts, HacConfig(step_size=0.3))
        m2 = gradient_magnitude_stats(self.model, self.sur, self.pts, HacConfig(step_size=0.6))
        assert m2 == (2 * m1[0], 2 * m1[1])

    def test_multi_step(self):
        out = hac_step(self.model, self.sur, self.pts, HacConfig(step_size=1e-3, steps=3))
        assert out.shape == self.pts.shape

    @pytest.mark.parametrize("kw", [{"step_size": -1}, {"temperature": 0}, {"surrogate": "oracle"}, {"steps": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            HacConfig(**kw)


finite_scores = st.lists(st.floats(-5, 5), min_size=1, max_size=64)


class TestReweight:
    def test_equal_scores(self):
        assert np.all(reweight(np.full(10, 0.37), 0.5) == 1.0)

    def test_high_temperature(self):
        w = reweight(np.random.default_rng(0).random(32), 1e9)
        np.testing.assert_allclose(w, 1.0, atol=1e-8)

    @settings(max_examples=200)
    @given(finite_scores, st.floats(0.05, 10))
    def test_sum_and_monotone(self, scores, tau):
        s = np.array(scores)
        w = reweight(s, tau)
        assert w.sum() == pytest.approx(len(s), abs=1e-9)
        order = np.argsort(s)
        ss, ws = s[order], w[order]
        for i in range(len(s) - 1):
            if ss[i + 1] > ss[i] and (ss[i + 1] - ss[i]) / tau > 1e-12:
                assert ws[i + 1] >= ws[i]
        # strictness where the exponent gap is resolvable
        i, j = np.argmin(s), np.argmax(s)
        if (s[j] - s[i]) / tau > 1e-6 and w[i] > 0:
            assert w[j] > w[i]

    @settings(max_examples=50)
    @given(finite_scores, st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, scores, rnd):
        s = np.array(scores)
        perm = list(range(len(s)))
        rnd.shuffle(perm)
        np.testing.assert_allclose(reweight(s[perm], 0.5), reweight(s, 0.5)[perm], rtol=1e-12)

    def test_nonfinite(self):
        with pytest.raises(NumericalFailure):
            reweight([0.0, np.inf], 0.5)


class TestCorrelation:
    def test_linear(self):
        assert gap_size_correlation([(1, 2.0), (2, 4.0), (3, 6.0), (10, 20.0)]) == pytest.approx(1.0, abs=1e-15)

    def test_anti_linear(self):
        assert gap_size_correlation([(1, 1), (2, 0), (3, -1)]) == pytest.approx(-1.0, abs=1e-15)

    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        x = rng.integers(50, 1400, 40)
        y = 0.01 * x + rng.normal(0, 3, 40)
        assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)

    def test_constant_column(self):
        with pytest.raises(ValueError):
            gap_size_correlation([(1, 5), (2, 5), (3, 5)])

    def test_too_few(self):
        with pytest.raises(ValueError):
            gap_size_correlation([(1, 5), (2, 6)])
