"""
Reports: cost-report workbooks and text tables, PGM/PPM image files
"""

from .pnm import normalize_minmax, read_pnm, write_bytes_atomic, write_pgm, write_ppm
from .report_generator import ReportGenerator, generate_cost_report, render_text_report

__all__ = [
    'ReportGenerator',
    'generate_cost_report',
    'render_text_report',
    'normalize_minmax',
    'read_pnm',
    'write_bytes_atomic',
    'write_pgm',
    'write_ppm',
]
