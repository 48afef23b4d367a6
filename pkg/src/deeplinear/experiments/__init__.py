"""Scans, heat maps, the verify suite and the command line."""

from .config import ScanConfig, read_config_file
from .heatmap import emit_heatmap, read_ppm
from .scan import ScanCell, read_scan_csv, run_cell, run_scan
from .verify import FAMILIES, run_verify

__all__ = [
    "ScanConfig",
    "read_config_file",
    "emit_heatmap",
    "read_ppm",
    "ScanCell",
    "read_scan_csv",
    "run_cell",
    "run_scan",
    "FAMILIES",
    "run_verify",
]
