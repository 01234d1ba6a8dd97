# mlcov/schemas.py
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from mlcov.models import CostModel, EstimatorKind, HeatProblem, KappaParameterization, Regime


# 运行配置模型
class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # --- 热传导问题 ---
    length: float = Field(1.0, gt=0, description="杆长 (m)")
    flux: float = Field(5.0, description="均匀热源 f (W/m)")
    boundary_temp: float = Field(273.0, description="两端固定温度 (K)")
    kappa_mean: float = Field(0.1, description="导热系数 κ 的均值 (W/mK)；log 参数化时为 ln κ 的均值")
    kappa_std: float = Field(0.03, ge=0, description="导热系数 κ 的标准差；log 参数化时为 ln κ 的标准差")
    kappa_parameterization: KappaParameterization = Field(KappaParameterization.MOMENTS, description="κ 的参数化方式: moments 或 log")

    # --- 网格层级 ---
    e0: int = Field(8, ge=2, description="第 0 层单元数 E0")
    levels: int = Field(3, ge=0, le=16, description="最细层编号 L (共 L+1 层)")

    # --- 采样 ---
    run_seed: int = Field(20240607, ge=0, description="随机数主种子")
    screening_samples: int = Field(50, description="预筛选阶段每层样本数")
    screening_shared_seeds: bool = Field(True, description="预筛选各层是否共用同一组 κ 样本")
    eps2_half: List[float] = Field(default_factory=lambda: [1e-3, 0.75e-3, 0.5e-3], description="目标抽样误差 ε²/2 列表 (K⁴)")

    # --- 成本模型 ---
    cost_model: CostModel = Field(CostModel.SYNTHETIC, description="成本模型: synthetic (按单元数) 或 measured (实测墙钟时间)")
    cost_unit: float = Field(1.0, gt=0, description="合成成本模型中每个单元的成本")

    # --- 输出 ---
    probe_pairs: Optional[List[Tuple[int, int]]] = Field(None, description="与解析协方差对照的最细网格节点对 (i, j)")
    out_dir: str = Field("reports", min_length=1, description="报告输出目录")

    @field_validator('screening_samples')
    @classmethod
    def check_screening_samples(cls, v: int):
        if v < 4:
            raise ValueError(f"screening_samples 至少为 4 (四元 h-统计量需要 n > 3)，当前为 {v}")
        return v

    @field_validator('eps2_half')
    @classmethod
    def check_eps2_half(cls, v: List[float]):
        if not v:
            raise ValueError("eps2_half 不能为空")
        for item in v:
            if not item > 0:
                raise ValueError(f"eps2_half 必须全部为正数，收到 {item}")
        return v

    @model_validator(mode='after')
    def check_problem_and_probes(self) -> 'RunConfig':
        if self.kappa_parameterization == KappaParameterization.MOMENTS and self.kappa_mean <= 0:
            raise ValueError("moments 参数化下 kappa_mean 必须为正")
        if self.probe_pairs:
            nodes = self.e0 * 2 ** self.levels + 1
            for i, j in self.probe_pairs:
                if not (0 <= i < nodes and 0 <= j < nodes):
                    raise ValueError(f"probe_pairs 中的 ({i}, {j}) 超出最细网格节点范围 [0, {nodes - 1}]")
        return self

    def problem(self) -> HeatProblem:
        return HeatProblem(
            length=self.length, flux=self.flux, boundary_temp=self.boundary_temp,
            kappa_mean=self.kappa_mean, kappa_std=self.kappa_std,
            kappa_parameterization=self.kappa_parameterization,
        )


# 单层统计量
class LevelStats(BaseModel):
    level: int
    n: int = Field(..., gt=3, description="该层使用的样本数 N_l")
    h: float = Field(..., description="该层单元尺寸 h_l")
    z_vech: List[float] = Field(..., description="层贡献 Z_l (或 Y_l) 的 vech")
    v_vech: List[float] = Field(..., description="V̂_{l,1,1} = N_l·V̂ar(Z_l) 的 vech (无偏，可为负)")
    cost_per_sample: float = Field(..., description="每个耦合样本的成本 C_l")
    max_abs_z: float
    max_v: float


# 预筛选阶段的单层汇总
class ScreeningLevel(BaseModel):
    level: int
    elements: int
    h: float
    samples: int
    max_abs_z: float = Field(..., description="max|vech(Z_l)|")
    max_v_hstat: float = Field(..., description="max vech(V̂_{l,1,1})")
    max_v_classical: float = Field(..., description="max vech(V̂_{l,cov})，经典最坏情形界")
    cost_per_sample: float
    deterministic_error: Optional[float] = Field(None, description="与上一层协方差估计的 max|vech 差|")


# 收敛速率拟合结果
class ScreeningFit(BaseModel):
    alpha: float
    c_alpha: float = Field(..., gt=0)
    beta: float
    c_beta: float = Field(..., gt=0)
    beta_star: float
    c_beta_star: float = Field(..., gt=0)
    gamma: float
    c_gamma: float = Field(..., gt=0)
    regime: Regime
    hypothesis_holds: bool = Field(..., description="α ≥ min(β, γ)/2 是否成立")


class ScreeningReport(BaseModel):
    e0: int
    levels: int
    screening_samples: int
    run_seed: int
    cost_model: CostModel
    per_level: List[ScreeningLevel]
    fit: Optional[ScreeningFit] = None
    diagnostic: Optional[str] = Field(None, description="速率无法拟合时的诊断信息")
    complexity_bounds: Dict[str, float] = Field(default_factory=dict, description="各目标 ε 下的复杂度包络 (不含常数)")


# 节点剖面 (均值或方差) 及其抽样误差
class Profile(BaseModel):
    values: List[float]
    sampling_error: List[float]


# 与解析协方差的探针对照
class ProbeCheck(BaseModel):
    i: int
    j: int
    estimate: float
    analytic: float
    stderr: float
    z_score: float
    within_3_stderr: bool


class EstimatorReport(BaseModel):
    estimator: EstimatorKind
    eps2_half: float
    m: int = Field(..., description="最细网格节点数")
    estimate_vech: List[float] = Field(..., description="最终 (修复后) 协方差矩阵的 vech")
    per_level: List[LevelStats]
    achieved_error: float = Field(..., description="max over vech of Σ_l v_vech/N_l")
    total_cost: float
    sample_counts: List[int]
    refinements: int = Field(0, description="自适应重新分配的轮数")
    min_eigenvalue_before_repair: Optional[float] = None
    discarded_eigenpairs: int = 0
    mean_profile: Optional[Profile] = None
    variance_profile: Optional[Profile] = None
    probes: List[ProbeCheck] = Field(default_factory=list)


# 单个精度目标下的三种估计量对比
class AccuracyComparison(BaseModel):
    eps2_half: float
    sample_counts: Dict[str, List[int]]
    achieved_error: Dict[str, float]
    total_cost: Dict[str, float]
    rel_cov_diff: Dict[str, float] = Field(..., description="‖Ĉ − Ĉ_MC‖_F / ‖Ĉ_MC‖_F")
    rel_var_diff: Dict[str, float] = Field(..., description="方差剖面相对 MC 的最大相对差")
    rel_mean_diff: Dict[str, float] = Field(..., description="均值剖面相对 MC 的最大相对差")
    speedup_vs_mc: Dict[str, float]
    hstat_vs_classical_speedup: float
    hstat_vs_classical_savings_percent: float


class ComparisonReport(BaseModel):
    cost_model: CostModel
    accuracies: List[AccuracyComparison]


# 预言机检查项
class OracleCheck(BaseModel):
    name: str
    method: str = Field(..., description="enumeration / route / analytic")
    expected: float
    actual: float
    rel_error: float
    tolerance: float
    passed: bool


class OracleReport(BaseModel):
    checks: List[OracleCheck]
    passed: bool
    elapsed_seconds: Optional[float] = None
