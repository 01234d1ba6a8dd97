# tests/test_estimator.py
import numpy as np
import pytest

from mlcov.core.config import settings
from mlcov.models import CostModel, EstimatorKind, Regime
from mlcov.services import heat_model as hm
from mlcov.services.estimator import EstimatorService, default_probe_pairs, synthetic_costs
from mlcov.utils.common_utils import is_psd

EPS2_HALF = 2e-2


@pytest.fixture
def service():
    return EstimatorService()


class TestScreening:

    def test_rates_follow_discretisation_order(self, service, small_config):
        report = service.screening(small_config).report
        assert report.diagnostic is None
        fit = report.fit
        assert 1.7 <= fit.alpha <= 2.3
        assert 3.4 <= fit.beta <= 4.6
        assert fit.gamma == pytest.approx(1.0, abs=1e-12)
        assert fit.regime == Regime.BETA_GT_GAMMA
        assert fit.hypothesis_holds
        assert set(report.complexity_bounds) == {"0.02"}

    def test_classical_bound_exceeds_hstat_estimate(self, service, small_config):
        report = service.screening(small_config).report
        for level in report.per_level[1:]:
            assert level.max_v_classical > level.max_v_hstat > 0

    def test_per_level_summary(self, service, small_config):
        result = service.screening(small_config)
        report = result.report
        assert [s.elements for s in report.per_level] == [4, 8, 16]
        assert [s.cost_per_sample for s in report.per_level] == [4.0, 12.0, 24.0]
        assert report.per_level[0].deterministic_error is None
        assert all(s.deterministic_error > 0 for s in report.per_level[1:])
        assert len(result.v_hstat) == 3 and result.v_hstat[0].shape == (17 * 18 // 2,)

    def test_deterministic_kappa_is_diagnosed(self, service, small_config):
        config = small_config.model_copy(update={"kappa_std": 0.0})
        report = service.screening(config).report
        assert report.fit is None
        assert report.diagnostic
        assert report.complexity_bounds == {}

    def test_independent_level_seeds(self, service, small_config):
        config = small_config.model_copy(update={"screening_shared_seeds": False})
        report = service.screening(config).report
        assert len(report.per_level) == 3
        assert report.per_level[1].max_abs_z > 0


class TestEstimate:

    def test_hstat_mlmc_meets_target(self, service, small_config):
        run = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF)
        report = run.report
        assert report.achieved_error <= EPS2_HALF
        assert len(report.sample_counts) == 3
        assert all(n >= 4 for n in report.sample_counts)
        assert report.total_cost == pytest.approx(sum(n * c for n, c in zip(report.sample_counts, [4, 12, 24])))
        assert is_psd(run.estimate)
        assert report.m == 17
        assert len(report.probes) == 5
        for probe in report.probes:
            assert abs(probe.z_score) < 5

    def test_hstat_needs_no_more_samples_than_classical(self, service, small_config):
        screening = service.screening(small_config)
        hstat = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF, screening).report
        classical = service.estimate(small_config, EstimatorKind.CLASSICAL_MLMC, EPS2_HALF, screening).report
        for l in range(1, 3):
            assert hstat.sample_counts[l] <= classical.sample_counts[l]
        assert hstat.total_cost <= classical.total_cost

    def test_mc_meets_target(self, service, small_config):
        run = service.estimate(small_config, EstimatorKind.MC, EPS2_HALF)
        report = run.report
        assert report.achieved_error <= EPS2_HALF
        assert len(report.sample_counts) == 1
        assert report.total_cost == pytest.approx(report.sample_counts[0] * 16)
        assert report.min_eigenvalue_before_repair is None

    def test_mean_profile_matches_closed_form(self, service, small_config):
        report = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF).report
        centre = 8
        expected = float(hm.analytic_mean(small_config.problem(), 0.5))
        assert expected == pytest.approx(279.8125)
        spread = np.sqrt(report.mean_profile.sampling_error[centre])
        assert abs(report.mean_profile.values[centre] - expected) < 5 * spread
        assert report.mean_profile.values[0] == pytest.approx(273.0)

    def test_variance_profile_matches_closed_form(self, service, small_config):
        report = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF).report
        centre = 8
        expected = hm.analytic_covariance(small_config.problem(), np.array([0.5]))[0, 0]
        spread = np.sqrt(report.variance_profile.sampling_error[centre])
        assert abs(report.variance_profile.values[centre] - expected) < 5 * spread
        assert report.variance_profile.values[0] == pytest.approx(0.0, abs=1e-12)

    def test_reproducible_across_worker_counts(self, service, small_config, monkeypatch):
        first = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF).report
        monkeypatch.setattr(settings, "WORKERS", 3)
        second = service.estimate(small_config, EstimatorKind.HSTAT_MLMC, EPS2_HALF).report
        assert first.sample_counts == second.sample_counts
        assert first.estimate_vech == second.estimate_vech

    def test_measured_cost_model(self, service, small_config):
        config = small_config.model_copy(update={"cost_model": CostModel.MEASURED})
        report = service.estimate(config, EstimatorKind.HSTAT_MLMC, EPS2_HALF).report
        assert report.total_cost > 0
        assert all(s.cost_per_sample > 0 for s in report.per_level)

    def test_custom_probes(self, service, small_config):
        config = small_config.model_copy(update={"probe_pairs": [(8, 8), (0, 8)]})
        probes = service.estimate(config, EstimatorKind.MC, EPS2_HALF).report.probes
        assert [(p.i, p.j) for p in probes] == [(8, 8), (0, 8)]
        # 边界节点温度恒定
        assert probes[1].estimate == 0.0 and probes[1].analytic == 0.0


class TestCompare:

    def test_mlmc_is_cheaper_than_mc(self, service, small_config):
        report, runs = service.compare(small_config)
        assert len(report.accuracies) == 1
        row = report.accuracies[0]
        assert set(row.total_cost) == {k.value for k in EstimatorKind}
        assert row.total_cost["hstat-mlmc"] <= row.total_cost["classical-mlmc"]
        assert row.speedup_vs_mc["hstat-mlmc"] > 1.5
        assert row.hstat_vs_classical_savings_percent > 0
        assert row.rel_cov_diff["hstat-mlmc"] < 0.2
        assert row.rel_mean_diff["hstat-mlmc"] < 1e-3
        assert set(runs[EPS2_HALF]) == set(EstimatorKind)

    def test_explicit_targets(self, service, small_config):
        report, _ = service.compare(small_config, [4e-2, 2e-2])
        assert [row.eps2_half for row in report.accuracies] == [4e-2, 2e-2]
        costs = [row.total_cost["mc"] for row in report.accuracies]
        assert costs[0] < costs[1]


def test_synthetic_costs(small_config):
    hierarchy = hm.build_hierarchy(small_config.problem(), 4, 2)
    assert synthetic_costs(small_config.model_copy(update={"cost_unit": 0.5}), hierarchy) == [2.0, 6.0, 12.0]


def test_default_probe_pairs():
    assert default_probe_pairs(17) == [(8, 8), (4, 4), (8, 4), (12, 4), (12, 8)]
