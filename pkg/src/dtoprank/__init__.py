"""Distributed change-point detection of SYN-flood targets from censored Top-M counts."""

from dtoprank.censored import (
    CensoredSeries,
    DegenerateSeries,
    TestResult,
    brownian_bridge_pvalue,
    compute_U,
    compute_U_bruteforce,
    normalize_Y,
    statistic_W,
    test_series,
)

__version__ = "0.1.0"
