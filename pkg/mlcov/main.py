# mlcov/main.py
import argparse
import logging
import sys
from typing import List, Optional

from mlcov import __version__
from mlcov.core.config import load_run_config, settings
from mlcov.core.exceptions import ConfigError, MlcovError, OracleFailure
from mlcov.models import CostModel, EstimatorKind
from mlcov.services import oracle
from mlcov.services.estimator import estimator_service_instance
from mlcov.services.report_writer import ReportWriter

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def _parse_eps_list(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--eps2-half 的值 '{raw}' 不是逗号分隔的数字列表")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value 格式的运行配置文件")
    common.add_argument("--seed", type=int, help="覆盖 run_seed")
    common.add_argument("--out", help="覆盖报告输出目录")
    common.add_argument("--cost-model", choices=[m.value for m in CostModel], help="成本模型")

    parser = argparse.ArgumentParser(prog="mlcov", description=settings.PROJECT_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("screening", parents=[common], help="预筛选: 各层统计量与收敛速率")

    estimate = sub.add_parser("estimate", parents=[common], help="按目标精度运行一种估计量")
    estimate.add_argument("--estimator", required=True, choices=[k.value for k in EstimatorKind])
    estimate.add_argument("--eps2-half", required=True, type=float, help="目标抽样误差 ε²/2 (K⁴)")

    compare = sub.add_parser("compare", parents=[common], help="三种估计量在各精度下的样本数与成本对比")
    compare.add_argument("--eps2-half", help="逗号分隔的 ε²/2 列表，缺省取配置文件")

    sub.add_parser("oracle", parents=[common], help="穷举认证全部无偏性公式")
    return parser


def cmd_screening(args) -> int:
    config = _load(args)
    result = estimator_service_instance.screening(config)
    ReportWriter(config.out_dir).write_screening(result.report)
    if result.report.fit:
        fit = result.report.fit
        print(f"α={fit.alpha:.3f}  β={fit.beta:.3f}  β*={fit.beta_star:.3f}  γ={fit.gamma:.3f}  区间 {fit.regime.value}")
    else:
        print(f"无法拟合速率: {result.report.diagnostic}")
    return 0


def cmd_estimate(args) -> int:
    if not args.eps2_half > 0:
        raise ConfigError(f"--eps2-half 必须为正，收到 {args.eps2_half}")
    config = _load(args)
    kind = EstimatorKind(args.estimator)
    run = estimator_service_instance.estimate(config, kind, args.eps2_half)
    ReportWriter(config.out_dir).write_estimate(run)
    report = run.report
    print(f"{kind.value}: N_l={report.sample_counts}  抽样误差={report.achieved_error:.4e}  总成本={report.total_cost:.6g}")
    return 0


def cmd_compare(args) -> int:
    eps_list = _parse_eps_list(args.eps2_half) if args.eps2_half else None
    config = _load(args, eps2_half=eps_list)
    report, runs = estimator_service_instance.compare(config)
    writer = ReportWriter(config.out_dir)
    writer.write_comparison(report)
    for by_kind in runs.values():
        for run in by_kind.values():
            writer.write_estimate(run)
    for row in report.accuracies:
        print(f"ε²/2={row.eps2_half:g}: " + "  ".join(f"{k}={v:.6g}" for k, v in row.total_cost.items()))
    return 0


def cmd_oracle(args) -> int:
    config = _load(args)
    report = oracle.run_certification()
    ReportWriter(config.out_dir).write_oracle(report)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name:<28} {check.method:<12} 相对误差 {check.rel_error:.2e}")
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        raise OracleFailure(f"预言机认证失败: {failed}")
    return 0


def _load(args, **extra):
    overrides = {"run_seed": args.seed, "out_dir": args.out, "cost_model": args.cost_model, **extra}
    return load_run_config(args.config, overrides)


COMMANDS = {
    "screening": cmd_screening,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
}


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MlcovError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"运行 {args.command} 时发生未预期的错误: {e}", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
