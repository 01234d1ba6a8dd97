# mlcov/services/estimator.py
"""
三种协方差估计流程 (h-统计量 MLMC、经典 MLMC、单层 MC) 的编排:
预筛选 → 样本分配 → 自适应补采样 → 组装与半正定修复 → 对比。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mlcov.core.config import settings
from mlcov.core.exceptions import DegenerateFitError, DomainError, EigenSolverError
from mlcov.models import CostModel, EstimatorKind, MeshHierarchy, SymCovMatrix
from mlcov.schemas import (AccuracyComparison, ComparisonReport, EstimatorReport, LevelStats, ProbeCheck, Profile,
                           RunConfig, ScreeningLevel, ScreeningReport)
from mlcov.services import heat_model, mlmc
from mlcov.services.heat_model import LevelAccumulator
from mlcov.utils import h_statistics as hs
from mlcov.utils.common_utils import is_psd, psd_diagnostics, repair_psd, unvech

logger = logging.getLogger(__name__)

ZERO_DIFFERENCE_RTOL = 1e-12


@dataclass
class ScreeningResult:
    report: ScreeningReport
    hierarchy: MeshHierarchy
    v_hstat: List[np.ndarray] = field(repr=False)
    v_classical: List[np.ndarray] = field(repr=False)
    costs: List[float]


@dataclass
class EstimatorRun:
    report: EstimatorReport
    estimate: SymCovMatrix = field(repr=False)
    accumulators: List[LevelAccumulator] = field(repr=False)


def synthetic_costs(config: RunConfig, hierarchy: MeshHierarchy) -> List[float]:
    """C_0 = E_0·unit，C_l = (E_l + E_{l−1})·unit (耦合样本要在两层各解一次)。"""
    costs = []
    for mesh in hierarchy.levels:
        elements = mesh.elements if mesh.level == 0 else mesh.elements + hierarchy.level(mesh.level - 1).elements
        costs.append(elements * config.cost_unit)
    return costs


def default_probe_pairs(m: int) -> List[Tuple[int, int]]:
    """最细网格上的五个内部节点对: 中点、四分点及其交叉项。"""
    c, q = (m - 1) // 2, (m - 1) // 4
    return [(c, c), (q, q), (c, q), (m - 1 - q, q), (m - 1 - q, c)]


class EstimatorService:

    # --- 预筛选 ---

    def screening(self, config: RunConfig) -> ScreeningResult:
        problem = config.problem()
        hierarchy = heat_model.build_hierarchy(problem, config.e0, config.levels)
        n = config.screening_samples
        logger.info(f"开始预筛选: E0={config.e0}, L={config.levels}, 每层 {n} 个样本，"
                    f"{'各层共用' if config.screening_shared_seeds else '各层独立'}随机种子")

        accs, v_hstat, v_classical, rows = [], [], [], []
        for l in range(hierarchy.finest_level + 1):
            stream = heat_model.SCREENING_STREAM if config.screening_shared_seeds else heat_model.SCREENING_STREAM + 1 + l
            acc = heat_model.generate_level_accumulators(hierarchy, l, n, config.run_seed, stream=stream)
            z, v = mlmc.level_terms(acc.cov)
            v_cl = mlmc.classical_level_variance(acc.plus, acc.minus, acc.rows, acc.cols)
            accs.append(acc)
            v_hstat.append(v)
            v_classical.append(v_cl)
            det = None
            if acc.coupled:
                det = mlmc.deterministic_error_proxy(hs.cross_h11(acc.cov, 0, 1), hs.cross_h11(acc.cov, 2, 3))
            rows.append((l, z, v, v_cl, det))

        costs = self._costs(config, hierarchy, accs)
        per_level = []
        for (l, z, v, v_cl, det), cost in zip(rows, costs):
            mesh = hierarchy.level(l)
            per_level.append(ScreeningLevel(
                level=l, elements=mesh.elements, h=mesh.h, samples=n,
                max_abs_z=float(np.max(np.abs(z))), max_v_hstat=float(np.max(v)),
                max_v_classical=float(np.max(v_cl)), cost_per_sample=cost, deterministic_error=det,
            ))
            logger.info(f"预筛选第 {l} 层: max|Z|={per_level[-1].max_abs_z:.4e}, max V̂={per_level[-1].max_v_hstat:.4e}, "
                        f"max V̂_cov={per_level[-1].max_v_classical:.4e}, C={cost:.4g}")

        report = ScreeningReport(
            e0=config.e0, levels=config.levels, screening_samples=n, run_seed=config.run_seed,
            cost_model=config.cost_model, per_level=per_level,
        )
        # 确定性 κ 时层差只剩舍入误差，以温升平方为尺度判零
        rise = heat_model.nominal_solution(hierarchy) - problem.boundary_temp
        floor = ZERO_DIFFERENCE_RTOL * float(np.max(np.abs(rise))) ** 2
        try:
            vanished = [s.level for s in per_level[1:] if s.max_abs_z <= floor]
            if vanished:
                raise DegenerateFitError(f"第 {vanished} 层的层差在舍入误差以内为零，κ 可能是确定性的")
            report.fit = mlmc.fit_rates([
                mlmc.RateSample(h=s.h, max_abs_z=s.max_abs_z, max_v=s.max_v_hstat,
                                max_v_classical=s.max_v_classical, cost=s.cost_per_sample)
                for s in per_level
            ])
            for eps2_half in config.eps2_half:
                eps = math.sqrt(2 * eps2_half)
                try:
                    report.complexity_bounds[f"{eps2_half:g}"] = mlmc.complexity_bound(report.fit, eps)
                except DomainError as e:
                    logger.warning(f"ε²/2={eps2_half:g} 不在渐近区间内，跳过复杂度包络: {e}")
        except DegenerateFitError as e:
            logger.warning(f"预筛选数据无法拟合收敛速率: {e}")
            report.diagnostic = str(e)
        return ScreeningResult(report=report, hierarchy=hierarchy, v_hstat=v_hstat, v_classical=v_classical, costs=costs)

    def _costs(self, config: RunConfig, hierarchy: MeshHierarchy, accs: Sequence[LevelAccumulator]) -> List[float]:
        if config.cost_model == CostModel.SYNTHETIC:
            return synthetic_costs(config, hierarchy)
        return [acc.measured_cost for acc in accs]

    # --- 估计 ---

    def estimate(self, config: RunConfig, kind: EstimatorKind, eps2_half: float,
                 screening: Optional[ScreeningResult] = None) -> EstimatorRun:
        if kind == EstimatorKind.MC:
            return self._estimate_mc(config, eps2_half, screening)
        screening = screening or self.screening(config)
        return self._estimate_mlmc(config, kind, eps2_half, screening)

    @staticmethod
    def _variances(kind: EstimatorKind, acc: LevelAccumulator) -> np.ndarray:
        if kind == EstimatorKind.CLASSICAL_MLMC:
            return mlmc.classical_level_variance(acc.plus, acc.minus, acc.rows, acc.cols)
        return mlmc.level_terms(acc.cov)[1]

    @staticmethod
    def _top_up(hierarchy: MeshHierarchy, config: RunConfig, acc: Optional[LevelAccumulator], l: int, target: int,
                stream: Optional[int] = None, coupled: bool = True) -> LevelAccumulator:
        have = acc.n if acc is not None else 0
        if have >= target:
            return acc
        # 每次补采样至少 4 个
        extra = max(target - have, 4)
        fresh = heat_model.generate_level_accumulators(hierarchy, l, extra, config.run_seed, stream=stream,
                                                       start=have, coupled=coupled)
        return fresh if acc is None else acc.merge(fresh)

    def _estimate_mlmc(self, config: RunConfig, kind: EstimatorKind, eps2_half: float,
                       screening: ScreeningResult) -> EstimatorRun:
        hierarchy = screening.hierarchy
        levels = hierarchy.finest_level + 1
        v_levels = list(screening.v_classical if kind == EstimatorKind.CLASSICAL_MLMC else screening.v_hstat)
        costs = list(screening.costs)
        targets = mlmc.allocate_samples(eps2_half, v_levels, costs)
        logger.info(f"{kind.value}: ε²/2={eps2_half:g}，按预筛选分配 N_l={targets}")

        accs: List[Optional[LevelAccumulator]] = [None] * levels
        refinements = 0
        for refinements in range(1, settings.MAX_REFINEMENTS + 1):
            for l in range(levels):
                accs[l] = self._top_up(hierarchy, config, accs[l], l, targets[l])
            v_levels = [self._variances(kind, acc) for acc in accs]
            if config.cost_model == CostModel.MEASURED:
                costs = [acc.measured_cost for acc in accs]
            wanted = mlmc.allocate_samples(eps2_half, v_levels, costs)
            have = [acc.n for acc in accs]
            if all(h >= w for h, w in zip(have, wanted)):
                break
            targets = [max(h, w) for h, w in zip(have, wanted)]
            logger.info(f"{kind.value}: 第 {refinements} 轮重新分配，N_l {have} → {targets}")
        else:
            logger.warning(f"{kind.value}: 达到最大重新分配轮数 {settings.MAX_REFINEMENTS}，抽样误差可能超过目标")

        n_l = [acc.n for acc in accs]
        z_levels = [mlmc.level_terms(acc.cov)[0] for acc in accs]
        raw = mlmc.telescope(z_levels)
        min_eig, discarded = psd_diagnostics(raw)
        estimate = repair_psd(raw)
        if not is_psd(estimate):
            raise EigenSolverError(f"{kind.value}: 半正定修复后仍有明显为负的特征值")
        if discarded:
            logger.info(f"{kind.value}: 半正定修复丢弃 {discarded} 个非正特征值 (最小 {min_eig:.3e})")

        mean, mean_err = mlmc.mlmc_mean([acc.minus for acc in accs])
        var, var_err = mlmc.mlmc_variance_h2([acc.pm for acc in accs])
        achieved = mlmc.sampling_error(v_levels, n_l)
        report = EstimatorReport(
            estimator=kind, eps2_half=eps2_half, m=estimate.m, estimate_vech=estimate.data.tolist(),
            per_level=self._level_stats(hierarchy, accs, z_levels, v_levels, costs),
            achieved_error=achieved, total_cost=mlmc.total_cost(n_l, costs), sample_counts=n_l,
            refinements=refinements, min_eigenvalue_before_repair=min_eig, discarded_eigenpairs=discarded,
            mean_profile=Profile(values=np.asarray(mean).tolist(), sampling_error=np.asarray(mean_err).tolist()),
            variance_profile=Profile(values=np.asarray(var).tolist(), sampling_error=np.asarray(var_err).tolist()),
            probes=self._probes(config, hierarchy, estimate, v_levels, n_l, accs[0]),
        )
        logger.info(f"{kind.value}: 完成，N_l={n_l}，抽样误差 {achieved:.4e} (目标 {eps2_half:g})，总成本 {report.total_cost:.6g}")
        return EstimatorRun(report=report, estimate=estimate, accumulators=accs)

    def _estimate_mc(self, config: RunConfig, eps2_half: float,
                     screening: Optional[ScreeningResult]) -> EstimatorRun:
        hierarchy = screening.hierarchy if screening else heat_model.build_hierarchy(
            config.problem(), config.e0, config.levels)
        finest = hierarchy.finest_level
        stream = heat_model.MC_STREAM
        # 先用与预筛选等量的样本估计 V̂_{1,1}，之后的样本沿同一随机数流继续
        acc = self._top_up(hierarchy, config, None, finest, config.screening_samples, stream=stream, coupled=False)
        refinements = 0
        for refinements in range(1, settings.MAX_REFINEMENTS + 1):
            v = mlmc.level_terms(acc.cov)[1]
            wanted = mlmc.mc_sample_count(eps2_half, v)
            if acc.n >= wanted:
                break
            logger.info(f"mc: 第 {refinements} 轮分配，N {acc.n} → {wanted}")
            acc = self._top_up(hierarchy, config, acc, finest, wanted, stream=stream, coupled=False)
        else:
            logger.warning(f"mc: 达到最大重新分配轮数 {settings.MAX_REFINEMENTS}，抽样误差可能超过目标")

        z, v = mlmc.level_terms(acc.cov)
        estimate = unvech(z, hierarchy.finest.node_count)
        cost = (hierarchy.finest.elements * config.cost_unit if config.cost_model == CostModel.SYNTHETIC
                else acc.measured_cost)
        mean, mean_err = mlmc.mlmc_mean([acc.minus])
        var, var_err = mlmc.mlmc_variance_h2([acc.pm])
        achieved = mlmc.sampling_error([v], [acc.n])
        mesh = hierarchy.finest
        report = EstimatorReport(
            estimator=EstimatorKind.MC, eps2_half=eps2_half, m=estimate.m, estimate_vech=estimate.data.tolist(),
            per_level=[LevelStats(level=finest, n=acc.n, h=mesh.h, z_vech=z.tolist(), v_vech=v.tolist(),
                                  cost_per_sample=cost, max_abs_z=float(np.max(np.abs(z))), max_v=float(np.max(v)))],
            achieved_error=achieved, total_cost=mlmc.total_cost([acc.n], [cost]), sample_counts=[acc.n],
            refinements=refinements,
            mean_profile=Profile(values=np.asarray(mean).tolist(), sampling_error=np.asarray(mean_err).tolist()),
            variance_profile=Profile(values=np.asarray(var).tolist(), sampling_error=np.asarray(var_err).tolist()),
            probes=self._probes(config, hierarchy, estimate, [v], [acc.n], acc),
        )
        logger.info(f"mc: 完成，N={acc.n}，抽样误差 {achieved:.4e} (目标 {eps2_half:g})，总成本 {report.total_cost:.6g}")
        return EstimatorRun(report=report, estimate=estimate, accumulators=[acc])

    @staticmethod
    def _level_stats(hierarchy: MeshHierarchy, accs, z_levels, v_levels, costs) -> List[LevelStats]:
        stats = []
        for acc, z, v, cost in zip(accs, z_levels, v_levels, costs):
            stats.append(LevelStats(
                level=acc.level, n=acc.n, h=hierarchy.level(acc.level).h, z_vech=z.tolist(), v_vech=v.tolist(),
                cost_per_sample=cost, max_abs_z=float(np.max(np.abs(z))), max_v=float(np.max(v)),
            ))
        return stats

    @staticmethod
    def _probes(config: RunConfig, hierarchy: MeshHierarchy, estimate: SymCovMatrix,
                v_levels, n_l, acc: LevelAccumulator) -> List[ProbeCheck]:
        """把估计值与解析协方差对照，标准误取 √(Σ_l V̂_l/N_l)。"""
        m = estimate.m
        pairs = config.probe_pairs or default_probe_pairs(m)
        analytic = heat_model.analytic_covariance(hierarchy.problem, hierarchy.finest.nodes)
        variance = np.zeros((m, m))
        error = sum(np.asarray(v, dtype=float) / n for v, n in zip(v_levels, n_l))
        variance[acc.rows, acc.cols] = error
        variance[acc.cols, acc.rows] = error
        probes = []
        for i, j in pairs:
            stderr = math.sqrt(max(float(variance[i, j]), 0.0))
            value = estimate.entry(i, j)
            diff = value - float(analytic[i, j])
            z = diff / stderr if stderr > 0 else (0.0 if diff == 0 else math.inf)
            probes.append(ProbeCheck(i=i, j=j, estimate=value, analytic=float(analytic[i, j]),
                                     stderr=stderr, z_score=z, within_3_stderr=abs(z) <= 3))
        return probes

    # --- 对比 ---

    def compare(self, config: RunConfig, eps2_half_list: Optional[Sequence[float]] = None,
                screening: Optional[ScreeningResult] = None) -> Tuple[ComparisonReport, Dict[float, Dict[EstimatorKind, EstimatorRun]]]:
        eps_list = list(eps2_half_list or config.eps2_half)
        screening = screening or self.screening(config)
        rows: List[AccuracyComparison] = []
        runs: Dict[float, Dict[EstimatorKind, EstimatorRun]] = {}
        for eps2_half in eps_list:
            by_kind = {kind: self.estimate(config, kind, eps2_half, screening) for kind in EstimatorKind}
            runs[eps2_half] = by_kind
            rows.append(self._compare_one(eps2_half, by_kind))
        return ComparisonReport(cost_model=config.cost_model, accuracies=rows), runs

    @staticmethod
    def _compare_one(eps2_half: float, by_kind: Dict[EstimatorKind, EstimatorRun]) -> AccuracyComparison:
        mc = by_kind[EstimatorKind.MC]
        hstat = by_kind[EstimatorKind.HSTAT_MLMC]
        classical = by_kind[EstimatorKind.CLASSICAL_MLMC]
        mc_var = np.asarray(mc.report.variance_profile.values)
        var_mask = np.abs(mc_var) > 0
        rel_cov, rel_var, rel_mean, speedups = {}, {}, {}, {}
        for kind in (EstimatorKind.HSTAT_MLMC, EstimatorKind.CLASSICAL_MLMC):
            run = by_kind[kind]
            rel_cov[kind.value] = mlmc.relative_frobenius_difference(run.estimate, mc.estimate)
            rel_var[kind.value] = mlmc.relative_profile_difference(run.report.variance_profile.values, mc_var, var_mask)
            rel_mean[kind.value] = mlmc.relative_profile_difference(run.report.mean_profile.values,
                                                                    mc.report.mean_profile.values)
            speedups[kind.value] = mlmc.speedup(run.report.total_cost, mc.report.total_cost)

        row = AccuracyComparison(
            eps2_half=eps2_half,
            sample_counts={k.value: r.report.sample_counts for k, r in by_kind.items()},
            achieved_error={k.value: r.report.achieved_error for k, r in by_kind.items()},
            total_cost={k.value: r.report.total_cost for k, r in by_kind.items()},
            rel_cov_diff=rel_cov, rel_var_diff=rel_var, rel_mean_diff=rel_mean, speedup_vs_mc=speedups,
            hstat_vs_classical_speedup=mlmc.speedup(hstat.report.total_cost, classical.report.total_cost),
            hstat_vs_classical_savings_percent=mlmc.savings_percent(hstat.report.total_cost, classical.report.total_cost),
        )
        logger.info(f"ε²/2={eps2_half:g}: MLMC/MC 加速比 {speedups[EstimatorKind.HSTAT_MLMC.value]:.2f}，"
                    f"h-统计量相对经典 MLMC 节省 {row.hstat_vs_classical_savings_percent:.1f}%，"
                    f"协方差相对差 {rel_cov[EstimatorKind.HSTAT_MLMC.value]:.3%}")
        if rel_cov[EstimatorKind.HSTAT_MLMC.value] > 0.02:
            logger.warning(f"ε²/2={eps2_half:g}: MLMC 与 MC 协方差的相对差超过 2%")
        if rel_mean[EstimatorKind.HSTAT_MLMC.value] > 5e-4:
            logger.warning(f"ε²/2={eps2_half:g}: MLMC 与 MC 均值的相对差超过 0.05%")
        return row


estimator_service_instance = EstimatorService()
