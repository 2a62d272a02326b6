"""
Audit of analytic costs against published figures
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from ..models.config import ModelConfig
from .cost_model import CostReport, cost_report
from .published import PUBLISHED, published_config

logger = logging.getLogger(__name__)


@dataclass
class AuditResult:
    """
    Outcome of comparing one config with its published figures

    `attribution` lists every top-level group with its share of the model
    and the part of the total gap proportional to that share.
    """
    name: str
    report: CostReport
    expected_params: float
    expected_macs: Optional[float]
    param_tolerance: float
    flop_tolerance: float
    attribution: pd.DataFrame

    @property
    def param_gap(self) -> float:
        return (self.report.total_params - self.expected_params) / self.expected_params

    @property
    def flop_gap(self) -> Optional[float]:
        if self.expected_macs is None:
            return None
        return (self.report.total_macs - self.expected_macs) / self.expected_macs

    @property
    def params_ok(self) -> bool:
        return abs(self.param_gap) <= self.param_tolerance

    @property
    def flops_ok(self) -> bool:
        gap = self.flop_gap
        return gap is None or abs(gap) <= self.flop_tolerance

    @property
    def passed(self) -> bool:
        return self.params_ok and self.flops_ok


def _attribution(report: CostReport, expected_params: float, expected_macs: Optional[float]) -> pd.DataFrame:
    groups = report.by_group().reset_index()
    params_total = max(report.total_params, 1)
    macs_total = max(report.total_macs, 1)
    groups["param_share"] = groups["params"] / params_total
    groups["macs_share"] = groups["macs"] / macs_total
    groups["param_gap_part"] = groups["param_share"] * (report.total_params - expected_params)
    if expected_macs is not None:
        groups["macs_gap_part"] = groups["macs_share"] * (report.total_macs - expected_macs)
    return groups


def audit(config: ModelConfig, expected_params: float, expected_flops: Optional[float] = None,
          tolerances: Tuple[float, float] = (0.02, 0.10), input_size=None) -> AuditResult:
    """
    Compare `config` with published totals

    Args:
        config: model configuration
        expected_params: published parameter count
        expected_flops: published compute figure, in multiply-accumulates
        tolerances: (relative param tolerance, relative compute tolerance)
        input_size: resolution the compute figure refers to
    """
    report = cost_report(config, input_size)
    result = AuditResult(
        name=config.name,
        report=report,
        expected_params=float(expected_params),
        expected_macs=None if expected_flops is None else float(expected_flops),
        param_tolerance=tolerances[0],
        flop_tolerance=tolerances[1],
        attribution=_attribution(report, expected_params, expected_flops),
    )
    logger.info("Audit %s: params gap %+.2f%%, passed=%s", config.name, 100 * result.param_gap, result.passed)
    return result


def audit_published(key: str) -> AuditResult:
    """Audit a named variant against the PUBLISHED table"""
    figures = PUBLISHED[key]
    result = audit(published_config(key), figures.params, figures.macs,
                   (figures.param_tolerance, figures.flop_tolerance), figures.input_size)
    result.name = key
    return result


def audit_all(keys: Optional[Sequence[str]] = None) -> List[AuditResult]:
    return [audit_published(k) for k in (keys or list(PUBLISHED))]


def format_audit(result: AuditResult) -> str:
    """Human-readable pass/fail report with per-group attribution of the gap"""
    status = "PASS" if result.passed else "FAIL"
    lines = [
        f"[{status}] {result.name}",
        f"  params: {result.report.total_params:,} vs published {result.expected_params:,.0f} "
        f"({100 * result.param_gap:+.2f}%, tolerance {100 * result.param_tolerance:.0f}%)",
    ]
    if result.expected_macs is not None:
        lines.append(
            f"  MACs:   {result.report.total_macs:,} vs published 'FLOPs' {result.expected_macs:,.0f} "
            f"({100 * result.flop_gap:+.2f}%, tolerance {100 * result.flop_tolerance:.0f}%); "
            f"FLOPs = {result.report.total_flops:,}"
        )
    if not result.passed:
        lines.append("  gap by group (proportional to each group's share):")
        for _, row in result.attribution.iterrows():
            lines.append(f"    {row['group']:<14} params {int(row['params']):>13,} "
                         f"share {100 * row['param_share']:5.1f}% gap part {row['param_gap_part']:+,.0f}")
    return "\n".join(lines)


def audit_frame(results: Sequence[AuditResult]) -> pd.DataFrame:
    """One row per audited variant"""
    return pd.DataFrame([{
        "variant": r.name,
        "params": r.report.total_params,
        "published_params": r.expected_params,
        "param_gap": r.param_gap,
        "macs": r.report.total_macs,
        "published_macs": r.expected_macs,
        "flop_gap": r.flop_gap,
        "passed": r.passed,
    } for r in results])
