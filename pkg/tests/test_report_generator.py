"""
Unit tests for report_generator module
Tests cost-report workbook and text generation
"""

from pathlib import Path

import pytest
from openpyxl import load_workbook

from src.analysis import audit, compare_scopes, cost_report, count_params, instrumented_counter
from src.models import build_model, hlg_toy
from src.reports import ReportGenerator, generate_cost_report, render_text_report


@pytest.fixture
def toy_report():
    return cost_report(hlg_toy())


class TestReportGeneratorBasic:
    """Test basic workbook generation"""

    def test_report_generator_creation(self, tmp_path):
        """Test creating a report generator"""
        generator = ReportGenerator(str(tmp_path / "cost.xlsx"))
        assert generator.output_path.name.endswith('.xlsx')
        assert generator.workbook.sheetnames == []

    def test_sheets_created(self, tmp_path, toy_report):
        """Test Summary, Breakdown and Legend are written in order"""
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report)
        wb = load_workbook(output)
        assert wb.sheetnames == ['Summary', 'Breakdown', 'Legend']

    def test_summary_totals(self, tmp_path, toy_report):
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report)
        ws = load_workbook(output)['Summary']
        assert ws['A1'].value == "Cost Report - hlg-toy"
        values = {ws[f'A{r}'].value: ws[f'B{r}'].value for r in range(4, 9)}
        assert values["Input size"] == "64x64"
        assert values["Total params"] == toy_report.total_params
        assert values["Total FLOPs"] == 2 * toy_report.total_macs


class TestBreakdownSheet:
    """Test one row per module part plus a total row"""

    def test_rows_and_total(self, tmp_path, toy_report):
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report)
        ws = load_workbook(output)['Breakdown']
        assert [c.value for c in ws[1]] == ["scope", "module", "params", "macs", "flops"]
        n = len(toy_report.breakdown)
        assert ws.cell(row=2, column=1).value == "stem"
        assert ws.cell(row=n + 2, column=1).value == "TOTAL"
        assert ws.cell(row=n + 2, column=3).value == toy_report.total_params
        assert ws.freeze_panes == 'A2'


class TestAuditAndScopes:
    """Test the optional audit block and scope sheet"""

    def test_audit_colouring(self, tmp_path, toy_report):
        """Test a failing audit is filled red"""
        result = audit(hlg_toy(), count_params(hlg_toy()) * 2)
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report, result)
        ws = load_workbook(output)['Summary']
        audit_rows = [r for r in range(1, ws.max_row + 1) if ws[f'A{r}'].value == "Published params"]
        assert len(audit_rows) == 1
        cell = ws[f'C{audit_rows[0]}']
        assert cell.value == "-50.00%"
        assert cell.fill.start_color.rgb.endswith(ReportGenerator.COLORS['FAIL'])

    def test_compute_row_names_the_unit(self, tmp_path, toy_report):
        """Test the published compute row reads as MACs tabled under the name FLOPs"""
        config = hlg_toy()
        result = audit(config, count_params(config), expected_flops=toy_report.total_macs)
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report, result)
        ws = load_workbook(output)['Summary']
        labels = [ws[f'A{r}'].value for r in range(1, ws.max_row + 1)]
        row = labels.index("Published MACs (tabled as 'FLOPs')") + 1
        assert ws[f'B{row}'].value == toy_report.total_macs
        assert ws[f'C{row}'].value == "+0.00%"

    def test_scope_sheet(self, tmp_path, toy_report):
        config = hlg_toy()
        counter = instrumented_counter(build_model(config, seed=0), (64, 64))
        frame = compare_scopes(toy_report, counter)
        output = ReportGenerator(str(tmp_path / "cost.xlsx")).generate_report(toy_report, scope_check=frame)
        wb = load_workbook(output)
        assert 'Scope Check' in wb.sheetnames
        ws = wb['Scope Check']
        assert [c.value for c in ws[1]] == ["scope", "analytic_macs", "measured_macs", "rel_gap"]
        assert ws.max_row == len(frame) + 1


class TestTextAndFiles:
    """Test the text rendition and the paired files"""

    def test_text_includes_audit(self, toy_report):
        result = audit(hlg_toy(), count_params(hlg_toy()))
        text = render_text_report(toy_report, result)
        assert text.startswith("Cost report: hlg-toy @ 64x64")
        assert "[PASS] hlg-toy" in text
        assert text.endswith("\n")

    def test_generate_cost_report(self, tmp_path, toy_report):
        output = generate_cost_report(str(tmp_path / "out"), toy_report)
        assert output == tmp_path / "out" / "hlg-toy_cost.xlsx"
        assert output.exists()
        assert Path(tmp_path / "out" / "hlg-toy_cost.txt").read_text().startswith("Cost report")
