# mlcov/services/report_writer.py
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel

from mlcov.schemas import ComparisonReport, OracleReport, ScreeningReport
from mlcov.services.estimator import EstimatorRun

logger = logging.getLogger(__name__)


def _tag(eps2_half: float) -> str:
    return f"{eps2_half:g}"


class ReportWriter:
    """JSON 报告加 CSV 表格，便于绘图与回归对比。每个文件只由一个写者生成。"""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _json(self, name: str, model: BaseModel) -> Path:
        path = self._path(name)
        path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"已写出 {path}")
        return path

    def _csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        # 逐格转成字符串，浮点数保留完整精度 (str 即最短往返表示)
        table = np.array([[str(v) for v in row] for row in rows], dtype=object).reshape(-1, len(header))
        path = self._path(name)
        np.savetxt(path, table, fmt="%s", delimiter=",", header=",".join(header), comments="", encoding="utf-8")
        logger.info(f"已写出 {path}")
        return path

    # --- 预筛选 ---

    def write_screening(self, report: ScreeningReport) -> List[Path]:
        rows = [(s.level, s.elements, s.h, s.samples, s.max_abs_z, s.max_v_hstat,
                 s.max_v_classical, s.cost_per_sample,
                 "" if s.deterministic_error is None else s.deterministic_error)
                for s in report.per_level]
        return [
            self._json("screening.json", report),
            self._csv("screening_levels.csv",
                      ["level", "elements", "h", "samples", "max_abs_z", "max_v_hstat", "max_v_classical",
                       "cost_per_sample", "deterministic_error"], rows),
        ]

    # --- 估计 ---

    def write_estimate(self, run: EstimatorRun) -> List[Path]:
        report = run.report
        stem = f"estimate_{report.estimator.value}_{_tag(report.eps2_half)}"
        rows = [(s.level, s.n, s.h, s.max_abs_z, s.max_v, s.cost_per_sample)
                for s in report.per_level]
        matrix_path = self._path(f"{stem}_covariance.csv")
        np.savetxt(matrix_path, run.estimate.to_full(), delimiter=",", fmt="%.17g")
        logger.info(f"已写出 {matrix_path}")
        paths = [
            self._json(f"{stem}.json", report),
            self._csv(f"{stem}_levels.csv", ["level", "n", "h", "max_abs_z", "max_v", "cost_per_sample"], rows),
            matrix_path,
        ]
        if report.mean_profile and report.variance_profile:
            mean, var = report.mean_profile, report.variance_profile
            profile_rows = [(k, mean.values[k], mean.sampling_error[k],
                             var.values[k], var.sampling_error[k]) for k in range(len(mean.values))]
            paths.append(self._csv(f"{stem}_profiles.csv",
                                   ["node", "mean", "mean_sampling_error", "variance", "variance_sampling_error"],
                                   profile_rows))
        return paths

    # --- 对比 ---

    def write_comparison(self, report: ComparisonReport) -> List[Path]:
        sample_rows, cost_rows, accuracy_rows = [], [], []
        for row in report.accuracies:
            for kind, counts in row.sample_counts.items():
                for level, n in enumerate(counts):
                    sample_rows.append((_tag(row.eps2_half), kind, level, n))
            for kind, cost in row.total_cost.items():
                cost_rows.append((_tag(row.eps2_half), kind, cost, row.speedup_vs_mc.get(kind, 1.0)))
            for kind, achieved in row.achieved_error.items():
                accuracy_rows.append((_tag(row.eps2_half), kind, achieved,
                                      row.rel_cov_diff.get(kind, 0.0), row.rel_var_diff.get(kind, 0.0),
                                      row.rel_mean_diff.get(kind, 0.0)))
        return [
            self._json("comparison.json", report),
            self._csv("comparison_samples.csv", ["eps2_half", "estimator", "level", "n"], sample_rows),
            self._csv("comparison_costs.csv", ["eps2_half", "estimator", "total_cost", "speedup_vs_mc"], cost_rows),
            self._csv("comparison_accuracy.csv",
                      ["eps2_half", "estimator", "achieved_error", "rel_cov_diff", "rel_var_diff", "rel_mean_diff"],
                      accuracy_rows),
        ]

    # --- 预言机 ---

    def write_oracle(self, report: OracleReport) -> List[Path]:
        rows = [(c.name, c.method, c.expected, c.actual, c.rel_error, "PASS" if c.passed else "FAIL")
                for c in report.checks]
        return [
            self._json("oracle.json", report),
            self._csv("oracle.csv", ["check", "method", "expected", "actual", "rel_error", "result"], rows),
        ]
