import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from spkde.kernels import (
    KernelFamily,
    KernelSpec,
    UnsupportedKernelError,
    WeightedDensityEstimate,
    estimate_eval,
    estimate_sample,
    gram_matrix,
    kernel_eval,
    kernel_matrix,
)

from oracles import quad_inner_product

FAMILIES = list(KernelFamily)


class TestKernelEval:
    def test_gaussian_mode(self):
        spec = KernelSpec("gaussian", 1, 1.0)
        assert kernel_eval(spec, [0.0], [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    def test_cauchy_mode(self):
        spec = KernelSpec("cauchy", 1, 1.0)
        assert kernel_eval(spec, [0.0], [0.0]) == pytest.approx(1 / math.pi, rel=1e-15)

    def test_cauchy_matches_scipy_in_1d(self):
        spec = KernelSpec("cauchy", 1, 0.7)
        x = np.linspace(-5, 5, 41)
        ours = kernel_matrix(spec, x[:, None], np.zeros((1, 1)))[:, 0]
        np.testing.assert_allclose(ours, stats.cauchy.pdf(x, scale=0.7), rtol=1e-13)

    def test_cauchy_matches_multivariate_t(self):
        # Cauchy kernel in d dims is a multivariate t with one degree of freedom
        spec = KernelSpec("cauchy", 3, 0.5)
        x = np.random.default_rng(0).normal(size=(10, 3))
        ref = stats.multivariate_t(loc=np.zeros(3), shape=0.25 * np.eye(3), df=1).pdf(x)
        np.testing.assert_allclose(kernel_matrix(spec, x, np.zeros((1, 3)))[:, 0], ref, rtol=1e-12)

    def test_gaussian_matches_scipy_multivariate_normal(self):
        spec = KernelSpec("gaussian", 2, 0.3)
        x = np.random.default_rng(1).normal(size=(10, 2))
        ref = stats.multivariate_normal(mean=[0.1, -0.2], cov=0.09 * np.eye(2)).pdf(x)
        np.testing.assert_allclose(kernel_matrix(spec, x, np.array([[0.1, -0.2]]))[:, 0], ref, rtol=1e-12)

    @given(
        family=st.sampled_from(FAMILIES),
        sigma=st.floats(0.05, 5.0),
        x=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
        y=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    )
    def test_symmetric(self, family, sigma, x, y):
        spec = KernelSpec(family, 2, sigma)
        assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_integrates_to_one_1d(self, family):
        spec = KernelSpec(family, 1, 0.4)
        val, _ = integrate.quad(lambda t: kernel_eval(spec, [t], [0.3]), -np.inf, np.inf, epsrel=1e-11)
        assert val == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_integrates_to_one_2d(self, family):
        spec = KernelSpec(family, 2, 0.4)
        # radial integral: 2 pi r k(r)
        f = lambda r: 2 * math.pi * r * kernel_eval(spec, [r, 0.0], [0.0, 0.0])
        val, _ = integrate.quad(f, 0, np.inf, epsrel=1e-11, limit=200)
        assert val == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_gaussian_grid_mass_within_eight_sigma(self, dim):
        sigma, h = 0.5, 0.5 / 40
        axis = np.arange(-8 * sigma + h / 2, 8 * sigma, h)
        pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), -1).reshape(-1, dim)
        mass = kernel_matrix(KernelSpec("gaussian", dim, sigma), pts, np.zeros((1, dim))).sum() * h ** dim
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_rejects_bad_spec(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 1, 0.0)
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 0, 1.0)
        with pytest.raises(ValueError):
            KernelSpec("epanechnikov", 1, 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(KernelSpec("gaussian", 2, 1.0), [0.0], [0.0, 1.0])

    def test_spec_round_trip(self):
        spec = KernelSpec("cauchy", 3, 0.25)
        assert KernelSpec.from_dict(spec.to_dict()) == spec


class TestGram:
    def test_gaussian_diagonal(self):
        g = gram_matrix(np.zeros((1, 1)), KernelSpec("gaussian", 1, 1.0))
        assert g.shape == (1, 1)
        assert g[0, 0] == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)

    def test_cauchy_diagonal(self):
        g = gram_matrix(np.zeros((1, 1)), KernelSpec("cauchy", 1, 1.0))
        assert g[0, 0] == pytest.approx(1 / (2 * math.pi), rel=1e-14)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_diagonal_matches_quadrature(self, family):
        spec = KernelSpec(family, 1, 1.0)
        g = gram_matrix(np.zeros((1, 1)), spec)[0, 0]
        assert g == pytest.approx(quad_inner_product(spec, [0.0], [0.0]), rel=1e-9)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("dim", [1, 2])
    def test_off_diagonal_matches_quadrature(self, family, dim):
        rng = np.random.default_rng(dim)
        spec = KernelSpec(family, dim, 0.6)
        pts = rng.normal(size=(2, dim))
        g = gram_matrix(pts, spec)
        assert g[0, 1] == pytest.approx(quad_inner_product(spec, pts[0], pts[1]), rel=1e-6)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_symmetric_exactly_and_psd(self, family, rng):
        for d in (1, 2, 5):
            pts = rng.normal(size=(60, d))
            g = gram_matrix(pts, KernelSpec(family, d, 0.3))
            assert np.array_equal(g, g.T)
            assert np.linalg.eigvalsh(g).min() >= -1e-9 * 60

    def test_duplicates_are_psd(self):
        pts = np.zeros((5, 2))
        g = gram_matrix(pts, KernelSpec("gaussian", 2, 1.0))
        assert np.linalg.eigvalsh(g).min() >= -1e-12
        assert np.ptp(g) == 0.0

    def test_capability_flag(self):
        assert all(f.closed_form_gram for f in KernelFamily)

    def test_missing_closed_form_fails_loudly(self, monkeypatch):
        import spkde.kernels as km

        monkeypatch.setattr(km, "_GRAM_SCALE", {})
        spec = KernelSpec("gaussian", 1, 1.0)
        assert not spec.family.closed_form_gram
        with pytest.raises(UnsupportedKernelError):
            gram_matrix(np.zeros((2, 1)), spec)


class TestEstimate:
    def test_single_point(self):
        spec = KernelSpec("gaussian", 2, 0.7)
        est = WeightedDensityEstimate([[0.5, -1.0]], [1.0], spec)
        q = np.array([[0.1, 0.2], [3.0, -1.0]])
        for row, v in zip(q, est(q)):
            assert v == pytest.approx(kernel_eval(spec, row, [0.5, -1.0]), rel=1e-14)

    def test_uniform_weights_is_mean_kernel(self, rng):
        spec = KernelSpec("cauchy", 1, 0.4)
        pts = rng.normal(size=(7, 1))
        est = WeightedDensityEstimate(pts, np.full(7, 1 / 7), spec)
        q = rng.normal(size=(5, 1))
        expected = [np.mean([kernel_eval(spec, x, p) for p in pts]) for x in q]
        np.testing.assert_allclose(est(q), expected, rtol=1e-14)

    def test_random_weights_match_double_loop(self, rng):
        spec = KernelSpec("gaussian", 3, 0.8)
        pts = rng.normal(size=(5, 3))
        w = rng.dirichlet(np.ones(5))
        w /= w.sum()
        est = WeightedDensityEstimate(pts, w, spec)
        q = rng.normal(size=(4, 3))
        naive = []
        for x in q:
            total = 0.0
            for wi, p in zip(w, pts):
                total += wi * kernel_eval(spec, x, p)
            naive.append(total)
        np.testing.assert_allclose(estimate_eval(est, q), naive, rtol=1e-14, atol=1e-14)

    def test_rejects_bad_weights(self):
        spec = KernelSpec("gaussian", 1, 1.0)
        with pytest.raises(ValueError):
            WeightedDensityEstimate([[0.0], [1.0]], [0.6, 0.6], spec)
        with pytest.raises(ValueError):
            WeightedDensityEstimate([[0.0], [1.0]], [1.5, -0.5], spec)
        with pytest.raises(ValueError):
            WeightedDensityEstimate(np.empty((0, 1)), [], spec)

    def test_arrays_are_read_only(self):
        est = WeightedDensityEstimate([[0.0]], [1.0], KernelSpec("gaussian", 1, 1.0))
        with pytest.raises(ValueError):
            est.weights[0] = 0.5


class TestSampling:
    def test_empty(self):
        est = WeightedDensityEstimate([[0.0, 0.0]], [1.0], KernelSpec("gaussian", 2, 1.0))
        assert estimate_sample(est, 0, 0).shape == (0, 2)

    def test_point_mass_component(self):
        spec = KernelSpec("gaussian", 1, 0.5)
        est = WeightedDensityEstimate([[3.0], [-50.0], [50.0]], [1.0, 0.0, 0.0], spec)
        x = est.sample(20_000, 3)
        assert np.all(np.abs(x - 3.0) < 10)
        assert abs(x.mean() - 3.0) < 0.02

    def test_gaussian_variance(self):
        est = WeightedDensityEstimate([[0.0]], [1.0], KernelSpec("gaussian", 1, 1.0))
        x = est.sample(100_000, 11)
        assert abs(x.var() - 1.0) < 0.05

    def test_seeded(self):
        est = WeightedDensityEstimate([[0.0], [1.0]], [0.3, 0.7], KernelSpec("cauchy", 1, 1.0))
        assert np.array_equal(est.sample(100, 5), est.sample(100, 5))

    def test_cauchy_histogram_matches_density(self):
        spec = KernelSpec("cauchy", 1, 0.5)
        est = WeightedDensityEstimate([[0.0]], [1.0], spec)
        x = est.sample(200_000, 21)[:, 0]
        edges = np.linspace(-4, 4, 33)
        counts, _ = np.histogram(x, bins=edges)
        expected = np.array([
            integrate.quad(lambda t: kernel_eval(spec, [t], [0.0]), a, b)[0]
            for a, b in zip(edges[:-1], edges[1:])
        ]) * x.size
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < stats.chi2.ppf(0.999, df=len(counts))

    def test_cauchy_2d_radial_distribution(self):
        # radius of a bivariate Cauchy draw: P(R <= r) = 1 - 1 / sqrt(1 + r^2 / s^2)
        s = 0.8
        est = WeightedDensityEstimate([[0.0, 0.0]], [1.0], KernelSpec("cauchy", 2, s))
        r = np.linalg.norm(est.sample(20_000, 4), axis=1)
        ks = stats.kstest(r, lambda t: 1 - 1 / np.sqrt(1 + t * t / (s * s)))
        assert ks.pvalue > 0.01
