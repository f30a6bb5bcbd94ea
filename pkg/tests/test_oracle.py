import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spkde.contamination import GaussianMixture, UniformBox
from spkde.kernels import KernelSpec, WeightedDensityEstimate
from spkde.oracle import (
    GridDensity,
    GridMismatchError,
    check_assumption_a,
    decontaminate,
    grid_from_estimate,
    lp_distance,
    make_grid,
    mix,
    slice_mass,
    slice_transform,
)
from spkde.qp import NumericError


def unit_uniform(h=1e-3):
    return UniformBox((0.0,), (1.0,)).on_grid(make_grid([0.0], [1.0], h))


def piecewise_pair(h=1e-3):
    grid = make_grid([0.0], [1.0], h)
    return UniformBox((0.0,), (0.5,)).on_grid(grid), UniformBox((0.0,), (1.0,)).on_grid(grid)


def random_grid_density(rng, n_cells=400):
    vals = rng.gamma(0.5, size=n_cells) * (rng.random(n_cells) < 0.7)
    vals[rng.integers(n_cells)] += 1.0
    g = GridDensity((0.0,), (1.0 / n_cells,), vals)
    return g.normalized()


class TestGridDensity:
    def test_mass_and_centres(self):
        g = make_grid([0.0, -1.0], [1.0, 1.0], 0.25)
        assert g.shape == (4, 8)
        assert g.cell_volume == 0.0625
        np.testing.assert_allclose(g.axes()[0], [0.125, 0.375, 0.625, 0.875])
        assert g.mass() == 0.0

    def test_rejects_negative_and_3d(self):
        with pytest.raises(ValueError):
            GridDensity((0.0,), (0.1,), [0.5, -0.1])
        with pytest.raises(ValueError):
            GridDensity((0, 0, 0), (1, 1, 1), np.ones((2, 2, 2)))

    def test_values_read_only(self):
        g = unit_uniform(0.1)
        with pytest.raises(ValueError):
            g.values[0] = 3.0

    @pytest.mark.parametrize("dim", [1, 2])
    def test_csv_round_trip(self, tmp_path, rng, dim):
        shape = (7,) if dim == 1 else (5, 6)
        g = GridDensity(tuple(rng.normal(size=dim)), tuple(rng.uniform(0.1, 1, size=dim)), rng.random(shape))
        path = tmp_path / "g.csv"
        g.to_csv(path)
        back = GridDensity.from_csv(path)
        assert back == g
        assert b"\r\n" not in path.read_bytes()

    def test_mismatch(self):
        with pytest.raises(GridMismatchError):
            lp_distance(unit_uniform(0.1), unit_uniform(0.2))


class TestSlice:
    def test_uniform_beta_two(self):
        res = slice_transform(unit_uniform(), 2.0)
        assert res.alpha == pytest.approx(1.0, abs=1e-8)
        assert lp_distance(res.density, unit_uniform()) < 1e-8

    def test_beta_near_one(self):
        f = GaussianMixture((1.0,), ((0.0,),), (0.5,)).on_grid(make_grid([-4], [4], 1e-3))
        f = f.normalized()
        res = slice_transform(f, 1 + 1e-9)
        assert res.alpha <= 1e-6 * f.values.max()
        assert lp_distance(res.density, f) < 1e-5

    def test_piecewise(self):
        f_tar, f_con = piecewise_pair()
        f_obs = mix(f_tar, f_con, 0.2)
        assert set(np.round(f_obs.values, 12)) == {1.8, 0.2}
        res = slice_transform(f_obs, 1.25)
        assert res.alpha == pytest.approx(0.25, abs=1e-8)
        assert lp_distance(res.density, f_tar) < 1e-8

    def test_rejects_beta_not_above_one(self):
        with pytest.raises(ValueError):
            slice_transform(unit_uniform(), 1.0)

    def test_rejects_unnormalised_input(self):
        g = unit_uniform()
        with pytest.raises(ValueError):
            slice_transform(g.with_values(g.values * 1.1), 2.0)

    def test_step_cap_is_numeric_error(self, rng):
        with pytest.raises(NumericError):
            slice_transform(random_grid_density(rng), 1.5, tol=1e-15, max_steps=5)

    def test_mass_function_shape(self, rng):
        f = random_grid_density(rng)
        beta = 1.5
        top = beta * f.values.max()
        alphas = np.linspace(0, top, 400)
        m = np.array([slice_mass(f, beta, a) for a in alphas])
        assert m[0] == pytest.approx(beta, rel=1e-12)
        assert m[-1] == 0.0
        assert np.all(np.diff(m) <= 1e-15)
        # Lipschitz in alpha with constant equal to the support volume
        assert np.all(np.abs(np.diff(m)) <= (alphas[1] - alphas[0]) * 1.0 + 1e-12)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1.1, 1.25, 2.0, 5.0]))
    def test_output_is_density(self, seed, beta):
        f = random_grid_density(np.random.default_rng(seed), 200)
        res = slice_transform(f, beta)
        assert res.mass_error <= 1e-10
        assert abs(res.density.mass() - 1) <= 1e-10
        assert res.density.values.min() >= 0
        tol = 1e-10
        assert slice_mass(f, beta, res.alpha - 10 * tol) > 1 > slice_mass(f, beta, res.alpha + 10 * tol)


class TestDecontaminate:
    def test_eps_zero_is_identity(self):
        g = unit_uniform()
        res = decontaminate(g, 0.0)
        assert res.alpha == 0.0 and res.density is g

    def test_piecewise_recovers_target(self):
        f_tar, f_con = piecewise_pair()
        res = decontaminate(mix(f_tar, f_con, 0.2), 0.2)
        assert lp_distance(res.density, f_tar) < 1e-8
        assert res.alpha == pytest.approx(0.2 * 1.0 / 0.8, abs=1e-8)

    def test_truncated_gaussian_plus_uniform(self):
        grid = make_grid([-3.0], [3.0], 1e-3)
        f_tar = GaussianMixture((1.0,), ((0.0,),), (0.6,)).on_grid(grid).normalized()
        f_con = UniformBox((-3.0,), (3.0,)).on_grid(grid)
        res = decontaminate(mix(f_tar, f_con, 0.3), 0.3)
        # target is positive everywhere on the window, so contamination is flat on its support
        assert check_assumption_a(f_tar, f_con)
        assert lp_distance(res.density, f_tar) < 1e-6

    @pytest.mark.parametrize("eps", [-0.1, 1.0])
    def test_rejects_bad_eps(self, eps):
        with pytest.raises(ValueError):
            decontaminate(unit_uniform(), eps)


class TestMix:
    def test_endpoints(self):
        f_tar, f_con = piecewise_pair()
        assert np.array_equal(mix(f_tar, f_con, 0.0).values, f_tar.values)
        np.testing.assert_allclose(mix(f_tar, f_con, 1 - 1e-12).values, f_con.values, atol=1e-11)

    def test_disjoint_uniforms(self):
        grid = make_grid([0.0], [2.0], 1e-2)
        a = UniformBox((0.0,), (1.0,)).on_grid(grid)
        b = UniformBox((1.0,), (2.0,)).on_grid(grid)
        m = mix(a, b, 0.5)
        np.testing.assert_allclose(m.values, 0.5, atol=1e-12)


class TestAssumption:
    def test_flat_contamination_holds(self):
        f_tar, f_con = piecewise_pair()
        check = check_assumption_a(f_tar, f_con)
        assert check and check.level == pytest.approx(1.0)

    def test_gaussian_contamination_fails(self):
        grid = make_grid([-2.0], [2.0], 1e-2)
        f_tar = UniformBox((-0.5,), (0.5,)).on_grid(grid)
        f_con = GaussianMixture((1.0,), ((0.0,),), (1.0,)).on_grid(grid)
        check = check_assumption_a(f_tar, f_con)
        assert not check and check.violations.shape[0] > 0

    def test_plateau_with_lower_tails_holds(self):
        grid = make_grid([-3.0], [3.0], 1e-3)
        f_tar = UniformBox((-1.0,), (1.0,)).on_grid(grid)
        x = grid.axes()[0]
        con = np.where(np.abs(x) <= 1.0, 1.0, np.exp(-(np.abs(x) - 1.0)))
        f_con = grid.with_values(con).normalized()
        assert check_assumption_a(f_tar, f_con)


class TestTabulation:
    def test_gaussian_mass(self):
        est = WeightedDensityEstimate([[0.0]], [1.0], KernelSpec("gaussian", 1, 1.0))
        g = grid_from_estimate(est, [-8.0], [16.0], 1e-3)
        assert 1 - 1e-6 <= g.mass() <= 1.0
        assert g.warning is None

    def test_matches_direct_evaluation(self, rng):
        pts = rng.normal(size=(20, 2))
        est = WeightedDensityEstimate(pts, np.full(20, 0.05), KernelSpec("gaussian", 2, 0.5))
        g = grid_from_estimate(est, [-6.0, -6.0], [12.0, 12.0], 0.1)
        direct = est(g.centers()).reshape(g.shape)
        assert np.array_equal(g.values, direct)

    def test_cauchy_truncation_warns(self):
        est = WeightedDensityEstimate([[0.0]], [1.0], KernelSpec("cauchy", 1, 1.0))
        with pytest.warns(UserWarning, match="Cauchy"):
            g = grid_from_estimate(est, [-8.0], [16.0], 1e-2)
        # P(|X| > 8) = 1 - 2 atan(8) / pi
        assert g.mass() == pytest.approx(2 * np.arctan(8) / np.pi, abs=1e-4)
        assert g.mass() < 0.99 and g.warning is not None

    def test_renormalise(self):
        est = WeightedDensityEstimate([[0.0]], [1.0], KernelSpec("cauchy", 1, 1.0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = grid_from_estimate(est, [-8.0], [16.0], 1e-2, renormalize=True)
        assert g.mass() == pytest.approx(1.0, abs=1e-12)


class TestDistance:
    def test_self(self):
        g = unit_uniform()
        assert lp_distance(g, g, 1) == 0.0 and lp_distance(g, g, 2) == 0.0

    def test_disjoint(self):
        grid = make_grid([0.0], [2.0], 1e-2)
        a = UniformBox((0.0,), (1.0,)).on_grid(grid)
        b = UniformBox((1.0,), (2.0,)).on_grid(grid)
        assert lp_distance(a, b, 1) == pytest.approx(2.0, abs=1e-12)
        assert lp_distance(a, b, 2) == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_scaled(self):
        g = unit_uniform()
        assert lp_distance(g, g.with_values(1.25 * g.values), 1) == pytest.approx(0.25, abs=1e-12)

    def test_bad_p(self):
        with pytest.raises(ValueError):
            lp_distance(unit_uniform(), unit_uniform(), 3)
