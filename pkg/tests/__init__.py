"""
Test suite for hlg-setr
"""

__version__ = "1.0.0"
