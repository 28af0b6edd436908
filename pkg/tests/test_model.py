import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import topobag as tb
from topobag.density import trapezoid2d
from topobag.model import PseudolikelihoodGrids

coord = st.floats(-3.0, 3.0, allow_nan=False)


def toy_pointset(seed=0, n=12):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 2)) * [1.0, 0.5]
    pts[:, 1] = np.abs(pts[:, 1])
    return tb.PointSet(pts)


def toy_density(ps, eta=0.5):
    return tb.restrict_halfplane(
        tb.KernelDensity(ps.points, tb.Bandwidth.isotropic(eta)),
        tb.default_grid_spec(ps),
    )


class TestNeighborhoods:
    def test_collinear_ordering(self):
        ps = tb.PointSet([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [7.0, 0.0]])
        assert tb.neighborhoods(ps, 0, 3).tolist() == [1, 2, 3]
        assert tb.neighborhoods(ps, 0, 1).tolist() == [1]

    def test_prefixes_nest(self):
        ps = toy_pointset(seed=3, n=9)
        full = tb.neighborhoods(ps, 4, 3)
        for k in (1, 2):
            assert tb.neighborhoods(ps, 4, k).tolist() == full[:k].tolist()

    def test_tie_goes_to_lower_index(self):
        ps = tb.PointSet([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
        assert tb.neighborhoods(ps, 0, 1).tolist() == [1]

    def test_too_few_points(self):
        ps = tb.PointSet([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            tb.neighborhoods(ps, 0, 2)


class TestLocalEnergy:
    def test_single_neighbor(self):
        assert tb.local_energy((0.0, 0.0), [[3.0, 0.0]], [2.0]) == pytest.approx(6.0)

    def test_zero_weights(self):
        nbrs = [[1.0, 2.0], [3.0, 1.0]]
        assert tb.local_energy((0.5, 0.5), nbrs, [0.0, 0.0]) == 0.0

    def test_nested_double_sum_by_hand(self):
        # neighbors at distance 1 and 2: first term |d1|, second |d1| + |d2|
        nbrs = [[1.0, 0.0], [0.0, 2.0]]
        value = tb.local_energy((0.0, 0.0), nbrs, [1.0, 1.0])
        assert value == pytest.approx(1.0 + (1.0 + 2.0))

    def test_shell_mode_counts_each_rank_once(self):
        nbrs = [[1.0, 0.0], [0.0, 2.0]]
        value = tb.local_energy((0.0, 0.0), nbrs, [1.0, 1.0], shells=True)
        assert value == pytest.approx(1.0 + 2.0)

    @given(st.tuples(coord, coord), st.floats(0.1, 10.0))
    @settings(max_examples=40)
    def test_translation_invariance_and_weight_linearity(self, shift, scale):
        y = np.array([0.3, 0.7])
        nbrs = np.array([[1.0, 0.2], [-0.5, 1.0]])
        theta = np.array([0.8, -0.3])
        base = tb.local_energy(y, nbrs, theta)
        moved = tb.local_energy(y + shift, nbrs + shift, theta)
        assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)
        assert tb.local_energy(y, nbrs, theta * scale) == pytest.approx(
            base * scale, rel=1e-12, abs=1e-12
        )


class TestConditional:
    def test_prior_only_model_collapses_to_prior(self):
        ps = toy_pointset()
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=1.0, theta=[0.0])
        for i in (0, 3, 7):
            ev = tb.conditional_log_density(ps, i, params, gd)
            assert ev.log_normalizer == pytest.approx(0.0, abs=1e-10)
            assert ev.log_density == pytest.approx(
                float(gd.log_density(ps.points[i : i + 1])[0]), abs=1e-10
            )

    def test_flat_model_normalizer_is_log_area(self):
        ps = toy_pointset()
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=0.0, theta=[0.0])
        ev = tb.conditional_log_density(ps, 0, params, gd)
        assert ev.log_normalizer == pytest.approx(np.log(gd.spec.area), rel=1e-12)

    @given(
        st.floats(0.0, 3.0),
        st.floats(-5.0, 5.0),
        st.integers(0, 11),
    )
    @settings(max_examples=25, deadline=None)
    def test_conditional_density_integrates_to_one(self, alpha, theta1, i):
        ps = toy_pointset(seed=1)
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=alpha, theta=[theta1])
        ev = tb.conditional_log_density(ps, i, params, gd)
        pts = ps.points
        nbrs = tb.neighborhoods(ps, i, 1)
        mesh1, mesh2 = np.meshgrid(gd.x1, gd.x2, indexing="ij")
        energy = -theta1 * np.hypot(mesh1 - pts[nbrs[0], 0], mesh2 - pts[nbrs[0], 1])
        if alpha:
            energy = energy + alpha * gd.log_values()
        density = np.exp(energy - ev.log_normalizer)
        assert trapezoid2d(density, gd.x1, gd.x2) == pytest.approx(1.0, abs=1e-10)

    def test_grid_refinement_shifts_normalizer_little(self, fitted_pipeline):
        ps = fitted_pipeline.pointsets[0]
        gd = fitted_pipeline.grid_densities[0]
        params = fitted_pipeline.fits[0].params
        fine = tb.restrict_halfplane(gd.kde, gd.spec.refine(2))
        coarse_ev = tb.conditional_log_density(ps, 0, params, gd)
        fine_ev = tb.conditional_log_density(ps, 0, params, fine)
        rel = abs(coarse_ev.log_normalizer - fine_ev.log_normalizer) / abs(
            fine_ev.log_normalizer
        )
        assert rel < 1e-2


class TestPseudolikelihood:
    def test_prior_only_equals_sum_of_log_prior(self):
        ps = toy_pointset()
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=1.0, theta=[0.0])
        expected = float(gd.log_density(ps.points).sum())
        assert tb.log_pseudolikelihood(ps, params, gd) == pytest.approx(expected, abs=1e-9)

    def test_permutation_invariance(self):
        ps = toy_pointset(seed=5, n=10)
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=1.4, theta=[2.0, -0.5, 0.3])
        base = tb.log_pseudolikelihood(ps, params, gd)
        rng = np.random.default_rng(0)
        for _ in range(3):
            perm = rng.permutation(ps.n)
            shuffled = tb.PointSet(ps.points[perm])
            assert tb.log_pseudolikelihood(shuffled, params, gd) == pytest.approx(
                base, abs=1e-9
            )

    def test_fast_path_matches_single_point_conditionals(self):
        ps = toy_pointset(seed=9, n=8)
        gd = toy_density(ps)
        params = tb.ModelParams(alpha=0.7, theta=[1.5, 0.2, 0.0])
        total = sum(
            tb.conditional_log_density(ps, i, params, gd).log_density
            for i in range(ps.n)
        )
        assert tb.log_pseudolikelihood(ps, params, gd) == pytest.approx(total, rel=1e-12)

    def test_negative_weight_discourages_proximity(self):
        # two points; the conditional at a position near the neighbor must be
        # relatively lower under a negative weight than under zero weight
        ps = tb.PointSet([[0.0, 0.5], [0.6, 0.5]])
        spec = tb.GridSpec(-2.0, 2.0, 0.0, 2.0)
        gd = tb.restrict_halfplane(
            tb.KernelDensity(ps.points, tb.Bandwidth.isotropic(0.6)), spec
        )
        near = np.array([0.55, 0.5])
        far = np.array([-1.0, 0.5])

        def conditional_ratio(theta1):
            grids_pts = np.vstack([near, far])
            energy = -theta1 * np.hypot(
                grids_pts[:, 0] - ps.points[1, 0], grids_pts[:, 1] - ps.points[1, 1]
            )
            dens = energy + 1.0 * gd.log_density(grids_pts)
            return dens[0] - dens[1]

        assert conditional_ratio(-4.0) < conditional_ratio(0.0)

    def test_vanishing_prior_is_reported(self):
        # a prior that underflows to exactly zero at the data points
        ps = tb.PointSet([[0.0, 0.1], [0.5, 0.2], [0.2, 0.4], [0.1, 0.3]])
        spec = tb.GridSpec(-1.0, 1.0, 0.0, 1.0, 21, 21)
        kd = tb.KernelDensity(np.array([[1e200, 0.2]]), tb.Bandwidth.isotropic(1.0))
        values = np.full((21, 21), 1.0 / spec.area)
        gd = tb.GridDensity(spec=spec, values=values, kde=kd, mass=1.0)
        params = tb.ModelParams(alpha=1.0, theta=[0.0])
        with pytest.raises(ValueError, match="point"):
            PseudolikelihoodGrids(ps, gd, K=1).log_pl(params)


class TestLegacyModel:
    def test_identical_points(self):
        pts = [[2.0, 3.0]] * 5
        lp = tb.LegacyParams(theta_h=1.0, theta_v=0.5, theta=[1.0], delta=1.0)
        value = tb.legacy_hamiltonian(tb.PointSet(pts), lp)
        assert value == pytest.approx(0.5 * 5 * 9.0)

    def test_small_delta_kills_interaction(self):
        ps = toy_pointset(seed=2, n=6)
        base = tb.LegacyParams(theta_h=0.3, theta_v=0.7, theta=[2.0], delta=1e-9)
        value = tb.legacy_hamiltonian(ps, base)
        pts = ps.points
        sigma_h2 = np.sum((pts[:, 0] - pts[:, 0].mean()) ** 2)
        sigma_v2 = np.sum(pts[:, 1] ** 2)
        assert value == pytest.approx(0.3 * sigma_h2 + 0.7 * sigma_v2, rel=1e-12)

    def test_three_point_hand_evaluation(self):
        ps = tb.PointSet([[0.0, 0.0], [3.0, 4.0], [0.0, 8.0]])
        lp = tb.LegacyParams(theta_h=0.5, theta_v=0.25, theta=[2.0], delta=6.0)
        # worked out step by step: horizontal deviations 1,2,1 about mean 1;
        # vertical squares 0,16,64; nearest-neighbor distances 5,5,5 (tie at
        # the middle point resolved to the lower index), all below delta
        sigma_h2 = 1.0 + 4.0 + 1.0
        sigma_v2 = 0.0 + 16.0 + 64.0
        interaction = 2.0 * (5.0 + 5.0 + 5.0) / 36.0
        expected = 0.5 * sigma_h2 + 0.25 * sigma_v2 + interaction
        assert tb.legacy_hamiltonian(ps, lp) == pytest.approx(expected, rel=1e-12)

    def test_delta_positive_required(self):
        with pytest.raises(ValueError):
            tb.LegacyParams(theta_h=0.0, theta_v=0.0, theta=[1.0], delta=0.0)


class TestModelParams:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            tb.ModelParams(alpha=3.5, theta=[0.0])

    def test_inactive_entries_must_be_zero(self):
        with pytest.raises(ValueError):
            tb.ModelParams(alpha=1.0, theta=[1.0, 2.0, 0.0], active=[True, False, False])

    def test_interaction_weights_nested_vs_shells(self):
        p = tb.ModelParams(alpha=1.0, theta=[1.0, 2.0, 4.0])
        assert p.interaction_weights().tolist() == [7.0, 6.0, 4.0]
        q = tb.ModelParams(alpha=1.0, theta=[1.0, 2.0, 4.0], shells=True)
        assert q.interaction_weights().tolist() == [1.0, 2.0, 4.0]


def test_fitted_model_json_round_trip(tmp_path):
    model = tb.FittedModel(
        tb.ModelParams(alpha=1.25, theta=[3.0, 0.0, 0.0], active=[True, False, False]),
        tb.Bandwidth.isotropic(0.07),
        tb.GridSpec(-1.0, 2.0, 0.0, 1.5, 101, 101),
    )
    path = tmp_path / "model.json"
    tb.save_model(model, path)
    loaded = tb.load_model(path)
    assert loaded.params.alpha == model.params.alpha
    assert np.array_equal(loaded.params.theta, model.params.theta)
    assert np.array_equal(loaded.params.active, model.params.active)
    assert np.allclose(loaded.bandwidth.matrix, model.bandwidth.matrix)
    assert loaded.grid == model.grid
