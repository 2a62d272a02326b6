"""
Excel Report Generator for cost reports
Writes the analyzer's CostReport as a formatted workbook plus a text table
"""

import io
from datetime import datetime
from pathlib import Path
from typing import Optional

import openpyxl
import pandas as pd
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from ..analysis.audit import AuditResult, format_audit
from ..analysis.cost_model import CostReport
from .pnm import write_bytes_atomic

# Column key names of the Breakdown sheet, documented on the Legend sheet
BREAKDOWN_KEYS = [
    ("scope", "op_scope label the module's kernels run under"),
    ("module", "module path inside the built model"),
    ("params", "learnable scalars owned by the module"),
    ("macs", "multiply-accumulates of one batch-1 eval forward"),
    ("flops", "2 x macs"),
]


def _fill(color: str) -> PatternFill:
    return PatternFill(start_color=color, end_color=color, fill_type='solid')


class ReportGenerator:
    """
    Generates the cost-report workbook: Summary, Breakdown, Legend and,
    when given, Scope Check (analytic vs instrumented MACs)
    """

    COLORS = {
        'HEADER': '4472C4',          # Blue
        'GROUP_A': 'FFFFFF',         # White
        'GROUP_B': 'E7E6E6',         # Light Gray
        'PASS': 'C6EFCE',            # Light Green
        'FAIL': 'FFC7CE',            # Light Red
        'NOTE': 'FFF2CC',            # Light Yellow
    }

    def __init__(self, output_path: str):
        self.output_path = Path(output_path)
        self.workbook = openpyxl.Workbook()
        if 'Sheet' in self.workbook.sheetnames:
            self.workbook.remove(self.workbook['Sheet'])

    def generate_report(self, report: CostReport, audit: Optional[AuditResult] = None,
                        scope_check: Optional[pd.DataFrame] = None) -> Path:
        """Build every sheet and save atomically to output_path"""
        self._create_summary_sheet(report, audit)
        self._create_breakdown_sheet(report)
        if scope_check is not None:
            self._create_scope_sheet(scope_check)
        self._create_legend_sheet()
        buffer = io.BytesIO()
        self.workbook.save(buffer)
        return write_bytes_atomic(self.output_path, buffer.getvalue())

    def _header_row(self, ws, row: int, headers) -> None:
        for col_idx, header in enumerate(headers, 1):
            cell = ws.cell(row=row, column=col_idx, value=header)
            cell.font = Font(bold=True, color='FFFFFF')
            cell.fill = _fill(self.COLORS['HEADER'])
            cell.alignment = Alignment(horizontal='center', vertical='center')

    def _create_summary_sheet(self, report: CostReport, audit: Optional[AuditResult]) -> None:
        ws = self.workbook.create_sheet("Summary", 0)
        ws['A1'] = f"Cost Report - {report.model}"
        ws['A1'].font = Font(size=16, bold=True, color='FFFFFF')
        ws['A1'].fill = _fill(self.COLORS['HEADER'])
        ws.merge_cells('A1:B1')

        ws['A2'] = "Generated:"
        ws['B2'] = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        ws['A2'].font = Font(bold=True)

        h, w = report.input_size
        stats = [
            ("Input size", f"{h}x{w}"),
            ("Total params", report.total_params),
            ("Total MACs", report.total_macs),
            ("Total FLOPs", report.total_flops),
            ("FLOP convention", "2 x multiply-accumulates; matmul and conv only"),
        ]
        row = 4
        for label, value in stats:
            ws[f'A{row}'] = label
            ws[f'B{row}'] = value
            ws[f'A{row}'].font = Font(bold=True)
            row += 1

        if audit is not None:
            row += 1
            ws[f'A{row}'] = "Audit"
            ws[f'A{row}'].font = Font(size=14, bold=True)
            row += 1
            checks = [("Published params", audit.expected_params, audit.param_gap, audit.params_ok)]
            if audit.expected_macs is not None:
                checks.append(("Published MACs (tabled as 'FLOPs')", audit.expected_macs,
                               audit.flop_gap, audit.flops_ok))
            for label, expected, gap, ok in checks:
                ws[f'A{row}'] = label
                ws[f'B{row}'] = expected
                ws[f'C{row}'] = f"{100 * gap:+.2f}%"
                ws[f'C{row}'].fill = _fill(self.COLORS['PASS' if ok else 'FAIL'])
                ws[f'A{row}'].font = Font(bold=True)
                row += 1

        row += 1
        ws[f'A{row}'] = "By group"
        ws[f'A{row}'].font = Font(size=14, bold=True)
        row += 1
        self._header_row(ws, row, ["group", "params", "macs"])
        for name, values in report.by_group().iterrows():
            row += 1
            ws.cell(row=row, column=1, value=name)
            ws.cell(row=row, column=2, value=int(values['params']))
            ws.cell(row=row, column=3, value=int(values['macs']))

        ws.column_dimensions['A'].width = 36
        ws.column_dimensions['B'].width = 24
        ws.column_dimensions['C'].width = 18

    def _create_breakdown_sheet(self, report: CostReport) -> None:
        ws = self.workbook.create_sheet("Breakdown")
        headers = [key for key, _ in BREAKDOWN_KEYS]
        self._header_row(ws, 1, headers)
        border = Border(left=Side(style='thin'), right=Side(style='thin'),
                        top=Side(style='thin'), bottom=Side(style='thin'))
        current_group, shade = None, 'GROUP_B'
        for offset, (_, values) in enumerate(report.breakdown.iterrows()):
            excel_row = offset + 2
            group = str(values['scope']).split('/')[0]
            if group != current_group:
                current_group = group
                shade = 'GROUP_A' if shade == 'GROUP_B' else 'GROUP_B'
            for col_idx, key in enumerate(headers, 1):
                value = values[key]
                cell = ws.cell(row=excel_row, column=col_idx,
                               value=int(value) if key in ('params', 'macs', 'flops') else value)
                cell.border = border
                cell.fill = _fill(self.COLORS[shade])
        total_row = len(report.breakdown) + 2
        ws.cell(row=total_row, column=1, value="TOTAL").font = Font(bold=True)
        ws.cell(row=total_row, column=3, value=report.total_params).font = Font(bold=True)
        ws.cell(row=total_row, column=4, value=report.total_macs).font = Font(bold=True)
        ws.cell(row=total_row, column=5, value=report.total_flops).font = Font(bold=True)
        for col_idx, width in enumerate((22, 44, 16, 20, 20), 1):
            ws.column_dimensions[get_column_letter(col_idx)].width = width
        ws.freeze_panes = 'A2'

    def _create_scope_sheet(self, scope_check: pd.DataFrame) -> None:
        ws = self.workbook.create_sheet("Scope Check")
        headers = list(scope_check.columns)
        self._header_row(ws, 1, headers)
        for offset, (_, values) in enumerate(scope_check.iterrows()):
            for col_idx, key in enumerate(headers, 1):
                value = values[key]
                ws.cell(row=offset + 2, column=col_idx, value=value.item() if hasattr(value, 'item') else value)
            if 'rel_gap' in scope_check.columns:
                ok = abs(float(values['rel_gap'])) <= 0.01
                ws.cell(row=offset + 2, column=headers.index('rel_gap') + 1).fill = \
                    _fill(self.COLORS['PASS' if ok else 'FAIL'])
        for col_idx in range(1, len(headers) + 1):
            ws.column_dimensions[get_column_letter(col_idx)].width = 20

    def _create_legend_sheet(self) -> None:
        ws = self.workbook.create_sheet("Legend")
        ws['A1'] = "Legend"
        ws['A1'].font = Font(size=16, bold=True)
        ws.merge_cells('A1:B1')
        row = 3
        ws[f'A{row}'] = "Breakdown keys"
        ws[f'A{row}'].font = Font(size=14, bold=True)
        for key, meaning in BREAKDOWN_KEYS:
            row += 1
            ws[f'A{row}'] = key
            ws[f'B{row}'] = meaning
            ws[f'A{row}'].font = Font(bold=True)
        row += 2
        ws[f'A{row}'] = "Conventions"
        ws[f'A{row}'].font = Font(size=14, bold=True)
        for note in (
            "Only matmuls and convolutions are counted; softmax, norms and activations are free.",
            "Batch size 1, eval mode: auxiliary segmentation heads add parameters but no compute.",
            "Published compute figures are compared as multiply-accumulates.",
        ):
            row += 1
            ws[f'A{row}'] = note
            ws[f'A{row}'].fill = _fill(self.COLORS['NOTE'])
            ws.merge_cells(f'A{row}:B{row}')
        ws.column_dimensions['A'].width = 24
        ws.column_dimensions['B'].width = 60


def render_text_report(report: CostReport, audit: Optional[AuditResult] = None) -> str:
    """Plain-text rendition: cost table, then the audit block when given"""
    text = report.to_text()
    if audit is not None:
        text += "\n\n" + format_audit(audit)
    return text + "\n"


def generate_cost_report(output_dir: str, report: CostReport, audit: Optional[AuditResult] = None,
                         scope_check: Optional[pd.DataFrame] = None) -> Path:
    """
    Write <model>_cost.xlsx and <model>_cost.txt into output_dir

    Returns:
        Path of the workbook
    """
    out = Path(output_dir)
    stem = f"{report.model}_cost"
    write_bytes_atomic(out / f"{stem}.txt", render_text_report(report, audit).encode("utf-8"))
    return ReportGenerator(out / f"{stem}.xlsx").generate_report(report, audit, scope_check)
