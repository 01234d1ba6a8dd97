# tests/test_heat_model.py
import numpy as np
import pytest
import scipy.linalg

from mlcov.core.config import settings
from mlcov.core.exceptions import DomainError, InsufficientSamplesError
from mlcov.models import HeatProblem, KappaParameterization
from mlcov.services import heat_model as hm
from mlcov.services import mlmc
from mlcov.utils import h_statistics as hs
from mlcov.utils.common_utils import unvech, vech_indices

PROBLEM = HeatProblem()


class TestHierarchy:

    def test_single_level(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 0)
        assert len(hierarchy.levels) == 1
        assert hierarchy.finest.elements == 4
        assert hierarchy.finest.h == pytest.approx(0.25)

    def test_doubling(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 8, 3)
        assert [m.elements for m in hierarchy.levels] == [8, 16, 32, 64]
        assert hierarchy.finest.node_count == 65

    def test_nested_nodes(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 2)
        np.testing.assert_allclose(hierarchy.level(2).nodes[::4], hierarchy.level(0).nodes, atol=1e-15)

    def test_invalid(self):
        with pytest.raises(DomainError):
            hm.build_hierarchy(PROBLEM, 1, 2)
        with pytest.raises(DomainError):
            hm.build_hierarchy(PROBLEM, 4, 1).level(2)


class TestSolver:

    @pytest.mark.parametrize("kappa", [0.05, 0.1, 0.2])
    def test_nodal_exactness(self, kappa):
        mesh = hm.build_hierarchy(PROBLEM, 8, 2).finest
        np.testing.assert_allclose(hm.solve_heat(mesh, kappa, PROBLEM),
                                   hm.analytic_solution(PROBLEM, mesh.nodes, kappa), rtol=1e-12)

    def test_centre_value(self):
        mesh = hm.build_hierarchy(PROBLEM, 8, 0).finest
        assert hm.solve_heat(mesh, 0.1, PROBLEM)[4] == pytest.approx(279.25, rel=1e-12)

    def test_no_source(self):
        mesh = hm.build_hierarchy(PROBLEM, 8, 0).finest
        np.testing.assert_allclose(hm.solve_heat(mesh, 0.1, HeatProblem(flux=0.0)), 273.0, rtol=0, atol=1e-12)

    def test_doubling_kappa_halves_rise(self):
        mesh = hm.build_hierarchy(PROBLEM, 16, 0).finest
        rise = hm.solve_heat(mesh, 0.1, PROBLEM) - 273.0
        np.testing.assert_allclose(hm.solve_heat(mesh, 0.2, PROBLEM) - 273.0, rise / 2, rtol=1e-12, atol=1e-12)

    def test_batch_matches_scalar(self):
        mesh = hm.build_hierarchy(PROBLEM, 8, 1).finest
        kappas = np.array([0.07, 0.1, 0.15])
        batch = hm.solve_heat(mesh, kappas, PROBLEM)
        assert batch.shape == (3, mesh.node_count)
        for b, kappa in enumerate(kappas):
            np.testing.assert_allclose(batch[b], hm.solve_heat(mesh, kappa, PROBLEM), rtol=1e-14)

    def test_non_positive_kappa(self):
        mesh = hm.build_hierarchy(PROBLEM, 4, 0).finest
        with pytest.raises(DomainError):
            hm.solve_heat(mesh, 0.0, PROBLEM)
        with pytest.raises(ValueError):
            hm.solve_heat(mesh, np.array([0.1, -0.1]), PROBLEM)

    def test_thomas_against_banded_solver(self, rng):
        n = 12
        a, c = rng.uniform(-1, 0, size=n - 1), rng.uniform(-1, 0, size=n - 1)
        b = rng.uniform(3, 4, size=n)
        d = rng.normal(size=n)
        banded = np.zeros((3, n))
        banded[0, 1:], banded[1], banded[2, :-1] = c, b, a
        np.testing.assert_allclose(hm.tdma(a, b, c, d), scipy.linalg.solve_banded((1, 1), banded, d), rtol=1e-12)

    def test_symmetry_under_reflection(self):
        mesh = hm.build_hierarchy(PROBLEM, 8, 2).finest
        u = hm.solve_heat(mesh, 0.13, PROBLEM)
        np.testing.assert_allclose(u, u[::-1], rtol=1e-13)


class TestKappa:

    def test_deterministic_when_std_zero(self, rng):
        problem = HeatProblem(kappa_std=0.0)
        assert hm.sample_kappa(rng, problem) == 0.1
        np.testing.assert_array_equal(hm.kappa_from_normal(problem, rng.normal(size=5)), np.full(5, 0.1))

    def test_moment_parameterization(self, rng):
        kappas = hm.kappa_from_normal(PROBLEM, rng.standard_normal(10 ** 6))
        assert abs(kappas.mean() - 0.1) < 3 * 0.03 / 10 ** 3
        assert np.all(kappas > 0)

    def test_log_parameterization(self):
        problem = HeatProblem(kappa_mean=np.log(0.1), kappa_std=0.0,
                              kappa_parameterization=KappaParameterization.LOG)
        assert hm.nominal_kappa(problem) == pytest.approx(0.1)
        assert hm.lognormal_parameters(problem) == (np.log(0.1), 0.0)

    def test_inverse_moments(self):
        mean, var = hm.inverse_kappa_moments(PROBLEM)
        assert mean == pytest.approx(10.9, rel=1e-12)
        assert var == pytest.approx(10.9 ** 2 * 0.09, rel=1e-12)

    def test_seeded_streams_are_reproducible(self):
        first = hm.sample_kappa(hm.sample_rng(7, 1, 3), PROBLEM)
        assert hm.sample_kappa(hm.sample_rng(7, 1, 3), PROBLEM) == first
        assert hm.sample_kappa(hm.sample_rng(7, 2, 3), PROBLEM) != first

    def test_analytic_mean_at_centre(self):
        assert hm.analytic_mean(PROBLEM, 0.5) == pytest.approx(273.0 + 5 * 0.25 / 2 * 10.9, rel=1e-12)


class TestInterpolation:

    def test_midpoint_averaging(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 2, 1)
        np.testing.assert_allclose(hm.interpolate_to_finest([0.0, 4.0, 0.0], 0, hierarchy), [0, 2, 4, 2, 0])

    def test_finest_is_identity(self, rng):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 2)
        values = rng.normal(size=17)
        np.testing.assert_array_equal(hm.interpolate_to_finest(values, 2, hierarchy), values)

    def test_linear_field_is_exact(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 3)
        coarse = 3.0 * hierarchy.level(0).nodes - 1.0
        np.testing.assert_allclose(hm.interpolate_to_finest(coarse, 0, hierarchy),
                                   3.0 * hierarchy.finest.nodes - 1.0, atol=1e-14)

    def test_batch_interpolation_and_cache(self, rng):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 2)
        values = rng.normal(size=(3, 9))
        out = hm.interpolate_to_finest(values, 1, hierarchy)
        assert out.shape == (3, 17)
        assert hm.interpolation_matrix(hierarchy, 1) is hierarchy._interpolation[1]


class TestCoupledSample:

    def test_level_zero_has_no_coarse(self, rng):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 2)
        pair = hm.coupled_sample(hierarchy, 0, rng)
        assert pair.u_coarse is None
        assert pair.u_fine.shape == (5,)

    def test_deterministic_levels_match_analytic(self):
        problem = HeatProblem(kappa_std=0.0)
        hierarchy = hm.build_hierarchy(problem, 4, 2)
        pair = hm.coupled_sample(hierarchy, 2, np.random.default_rng(0))
        np.testing.assert_allclose(pair.u_fine, hm.analytic_solution(problem, hierarchy.level(2).nodes, 0.1),
                                   rtol=1e-12)
        np.testing.assert_allclose(pair.u_coarse, hm.analytic_solution(problem, hierarchy.level(1).nodes, 0.1),
                                   rtol=1e-12)
        fine = hm.interpolate_to_finest(pair.u_fine, 2, hierarchy)
        coarse = hm.interpolate_to_finest(pair.u_coarse, 1, hierarchy)
        # 粗网格节点上两者一致，中点处相差线性插值误差
        np.testing.assert_allclose(fine[::2], coarse[::2], rtol=1e-12)

    def test_batch_rows_match_seeded_samples(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 2)
        kappas, fine, coarse = hm.level_batch(hierarchy, 2, 17, 2, 5, 11)
        assert fine.shape == coarse.shape == (6, 17)
        for row, k in enumerate(range(5, 11)):
            pair = hm.coupled_sample(hierarchy, 2, hm.sample_rng(17, 2, k), seed=(17, 2, k))
            assert pair.seed == (17, 2, k)
            assert pair.kappa == kappas[row]
            np.testing.assert_allclose(hm.interpolate_to_finest(pair.u_fine, 2, hierarchy), fine[row], rtol=1e-13)
            np.testing.assert_allclose(hm.interpolate_to_finest(pair.u_coarse, 1, hierarchy), coarse[row],
                                       rtol=1e-13)

    def test_accumulator_sums_come_from_seeded_samples(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 1)
        acc = hm.generate_level_accumulators(hierarchy, 1, 6, run_seed=4)
        centre = 4
        fine = [hm.interpolate_to_finest(hm.coupled_sample(hierarchy, 1, hm.sample_rng(4, 1, k)).u_fine, 1,
                                         hierarchy)[centre] for k in range(6)]
        np.testing.assert_allclose(acc.minus.mean()[centre] + acc.plus.mean()[centre],
                                   2 * np.mean(fine), rtol=1e-12)

    def test_uncoupled_batch_has_no_coarse(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 1)
        _, fine, coarse = hm.level_batch(hierarchy, 1, 1, 0, 0, 4, coupled=False)
        assert coarse is None
        assert fine.shape == (4, 9)


class TestLevelAccumulators:

    def test_level_zero_bookkeeping(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 0)
        acc = hm.generate_level_accumulators(hierarchy, 0, 4, run_seed=1)
        assert acc.n == 4
        assert not acc.coupled
        assert acc.cov.shape == (15,)

    def test_too_few_samples(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 0)
        with pytest.raises(InsufficientSamplesError):
            hm.generate_level_accumulators(hierarchy, 0, 3, run_seed=1)

    def test_deterministic_coupling_vanishes(self):
        hierarchy = hm.build_hierarchy(HeatProblem(kappa_std=0.0), 4, 2)
        acc = hm.generate_level_accumulators(hierarchy, 2, 10, run_seed=1)
        z, v = mlmc.level_terms(acc.cov)
        assert acc.coupled
        np.testing.assert_allclose(z, 0.0, atol=1e-10)
        np.testing.assert_allclose(v, 0.0, atol=1e-10)

    def test_shards_merge_to_single_run(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 1)
        whole = hm.generate_level_accumulators(hierarchy, 1, 20, run_seed=3)
        head = hm.generate_level_accumulators(hierarchy, 1, 12, run_seed=3)
        tail = hm.generate_level_accumulators(hierarchy, 1, 8, run_seed=3, start=12)
        merged = head.merge(tail)
        assert merged.n == 20
        for idx in whole.cov.INDICES:
            np.testing.assert_allclose(merged.cov.s(*idx), whole.cov.s(*idx), rtol=1e-10, atol=1e-12)

    def test_independent_of_worker_count(self, monkeypatch):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 1)
        monkeypatch.setattr(settings, "BATCH_SIZE", 8)
        serial = hm.generate_level_accumulators(hierarchy, 1, 40, run_seed=5)
        monkeypatch.setattr(settings, "WORKERS", 3)
        parallel = hm.generate_level_accumulators(hierarchy, 1, 40, run_seed=5)
        for idx in serial.cov.INDICES:
            np.testing.assert_array_equal(parallel.cov.s(*idx), serial.cov.s(*idx))
        np.testing.assert_array_equal(parallel.pm.s(1, 1), serial.pm.s(1, 1))

    def test_selected_pairs(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 1)
        pairs = (np.array([4, 2]), np.array([4, 6]))
        acc = hm.generate_level_accumulators(hierarchy, 1, 10, run_seed=2, pairs=pairs)
        full = hm.generate_level_accumulators(hierarchy, 1, 10, run_seed=2)
        rows, cols = vech_indices(9)
        k = int(np.flatnonzero((rows == 6) & (cols == 2))[0])
        np.testing.assert_allclose(hs.z_l(acc.cov)[1], hs.z_l(full.cov)[k], rtol=1e-9)

    def test_covariance_is_reflection_symmetric(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 8, 0)
        acc = hm.generate_level_accumulators(hierarchy, 0, 50, run_seed=11)
        full = unvech(hs.h11(acc.cov), 9).to_full()
        np.testing.assert_allclose(full, full[::-1, ::-1], rtol=1e-8)

    def test_centre_covariance_against_closed_form(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 8, 0)
        centre = (np.array([4]), np.array([4]))
        acc = hm.generate_level_accumulators(hierarchy, 0, 2000, run_seed=13, pairs=centre)
        estimate = float(hs.h11(acc.cov)[0])
        stderr = float(np.sqrt(max(hs.var_h11_unbiased(acc.cov)[0], 0.0)))
        expected = hm.analytic_covariance(PROBLEM, np.array([0.5]))[0, 0]
        assert expected == pytest.approx(0.390625 * 10.6929, rel=1e-6)
        assert abs(estimate - expected) < 4 * stderr

    def test_measured_cost(self):
        hierarchy = hm.build_hierarchy(PROBLEM, 4, 0)
        acc = hm.generate_level_accumulators(hierarchy, 0, 8, run_seed=1)
        assert acc.measured_cost >= 0
        assert acc.measured_cost == pytest.approx(acc.elapsed / 8)
