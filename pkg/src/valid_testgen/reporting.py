"""Valid / invalid / total coverage tables for generated suites."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .coverage import ActivationProfile, CoverageState, coverage_of, merge, report
from .models import CoverageColumns, CoverageConfig, ExperimentReport, SuiteRecordDocument, SuiteReport
from .nn import Network

METRICS = ("nc", "kmnc", "nbc", "snac")
EMPTY_CELL = "-"


def invalid_percent(valid: int, invalid: int) -> float:
    total = valid + invalid
    return 100.0 * invalid / total if total else 0.0


def coverage_columns(
    valid_state: CoverageState,
    invalid_state: CoverageState,
    cfg: CoverageConfig,
    valid_count: int | None = None,
    invalid_count: int | None = None,
) -> CoverageColumns:
    """Per-side reports plus the merged total.

    A side with no records (``*_count == 0``) is reported as ``None``. Counts
    default to "has records" so fixture states are always reported.
    """

    total = merge(valid_state, invalid_state)
    return CoverageColumns(
        valid=None if valid_count == 0 else report(valid_state, cfg),
        invalid=None if invalid_count == 0 else report(invalid_state, cfg),
        total=report(total, cfg),
    )


def _inputs(records: Sequence[SuiteRecordDocument], valid: bool, dim: int) -> np.ndarray:
    rows = [record.input for record in records if record.valid == valid]
    return np.array(rows, dtype=np.float64).reshape(-1, dim)


def suite_report(
    mode: str,
    records: Sequence[SuiteRecordDocument],
    net: Network,
    cfg: CoverageConfig,
    profile: ActivationProfile | None = None,
) -> SuiteReport:
    valid_inputs = _inputs(records, True, net.input_dim)
    invalid_inputs = _inputs(records, False, net.input_dim)
    valid_state = coverage_of(net, valid_inputs, cfg, profile)
    invalid_state = coverage_of(net, invalid_inputs, cfg, profile)
    columns = coverage_columns(valid_state, invalid_state, cfg, len(valid_inputs), len(invalid_inputs))
    total_state = merge(valid_state, invalid_state)
    return SuiteReport(
        mode=mode,
        valid=len(valid_inputs),
        invalid=len(invalid_inputs),
        invalid_percent=invalid_percent(len(valid_inputs), len(invalid_inputs)),
        coverage=columns,
        nc_vectors={
            "valid": valid_state.nc_vector() if len(valid_inputs) else None,
            "invalid": invalid_state.nc_vector() if len(invalid_inputs) else None,
            "total": total_state.nc_vector(),
        },
    )


def _cell(column: object, metric: str) -> str:
    if column is None:
        return EMPTY_CELL
    return f"{getattr(column, metric):.3f}"


def render_suite(suite: SuiteReport) -> str:
    header = f"{suite.mode}: {suite.valid} valid, {suite.invalid} invalid ({suite.invalid_percent:.1f}% invalid)"
    lines = [header, f"{'metric':<8}{'valid':>9}{'invalid':>9}{'total':>9}"]
    columns = suite.coverage
    for metric in METRICS:
        cells = [_cell(columns.valid, metric), _cell(columns.invalid, metric), _cell(columns.total, metric)]
        lines.append(f"{metric.upper():<8}" + "".join(f"{cell:>9}" for cell in cells))
    return "\n".join(lines)


def render_table(report_document: ExperimentReport) -> str:
    """Plain-text rendering; empty columns show "-"."""

    blocks = [f"model: {report_document.model}"]
    blocks.extend(render_suite(suite) for suite in report_document.suites)
    return "\n\n".join(blocks) + "\n"
