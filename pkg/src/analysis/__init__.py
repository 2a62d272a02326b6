"""
Static parameter / compute accounting and the published-figure audit
"""

from .audit import AuditResult, audit, audit_all, audit_frame, audit_published, format_audit
from .cost_model import (
    CostReport,
    compare_scopes,
    conv_flops,
    conv_params,
    cost_report,
    count_flops,
    count_macs,
    count_params,
    instrumented_counter,
    linear_params,
    matmul_flops,
)
from .published import PUBLISHED, PublishedFigures, published_config

__all__ = [
    'AuditResult',
    'audit',
    'audit_all',
    'audit_frame',
    'audit_published',
    'format_audit',
    'CostReport',
    'compare_scopes',
    'conv_flops',
    'conv_params',
    'cost_report',
    'count_flops',
    'count_macs',
    'count_params',
    'instrumented_counter',
    'linear_params',
    'matmul_flops',
    'PUBLISHED',
    'PublishedFigures',
    'published_config',
]
