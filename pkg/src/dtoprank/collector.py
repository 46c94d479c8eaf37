"""Collector side: aggregate censored bounds across monitors and decide."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from dtoprank.censored import CensoredSeries, test_series
from dtoprank.monitor import MonitorReport

__all__ = [
    "Alarm",
    "ProtocolError",
    "aggregate",
    "global_scores",
    "global_detect",
    "btoprank_scores",
    "btoprank_decide",
]


class ProtocolError(ValueError):
    """Reports for one window disagree on window id or series length."""


@dataclass(frozen=True)
class Alarm:
    dst: object
    window_id: int
    p_value: float
    change_point: int
    contributing_monitors: tuple[int, ...]
    method: str = "dtoprank"


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _window_id(reports: list[MonitorReport]) -> int:
    ids = {r.window_id for r in reports}
    if len(ids) > 1:
        raise ProtocolError(f"reports span several windows: {sorted(ids)}")
    return ids.pop() if ids else 0


def aggregate(reports: Iterable[MonitorReport]) -> dict[object, tuple[CensoredSeries, tuple[int, ...]]]:
    """Sum lower and upper bounds per destination over the monitors that reported it.

    Returns ``dst -> (aggregated series, reporting monitor ids)``.
    """
    reports = list(reports)
    _window_id(reports)
    lengths = {e.series.P for r in reports for e in r.entries}
    if len(lengths) > 1:
        raise ProtocolError(f"reports carry series of different lengths: {sorted(lengths)}")

    lower: dict = {}
    upper: dict = {}
    monitors: dict = {}
    for report in reports:
        for entry in report.entries:
            if entry.dst in lower:
                lower[entry.dst] = lower[entry.dst] + entry.series.lower
                upper[entry.dst] = upper[entry.dst] + entry.series.upper
                monitors[entry.dst].append(report.monitor_id)
            else:
                lower[entry.dst] = entry.series.lower.copy()
                upper[entry.dst] = entry.series.upper.copy()
                monitors[entry.dst] = [report.monitor_id]
    return {dst: (CensoredSeries(lower[dst], upper[dst]), tuple(sorted(monitors[dst])))
            for dst in lower}


def global_scores(reports: Iterable[MonitorReport]) -> dict[object, tuple[float, int, tuple[int, ...]]]:
    """Aggregated-series p-value, change point and contributors for every reported dst."""
    out = {}
    for dst, (series, mons) in aggregate(reports).items():
        res = test_series(series)
        out[dst] = (res.p_value, res.change_point, mons)
    return out


def global_detect(reports: Iterable[MonitorReport], alpha: float) -> list[Alarm]:
    """Alarm on every destination whose aggregated series has p-value below ``alpha``."""
    _check_alpha(alpha)
    reports = list(reports)
    window_id = _window_id(reports)
    alarms = [
        Alarm(dst, window_id, p, r_hat, mons, "dtoprank")
        for dst, (p, r_hat, mons) in global_scores(reports).items()
        if p < alpha
    ]
    return sorted(alarms, key=lambda a: (a.p_value, a.dst))


def btoprank_scores(reports: Iterable[MonitorReport], K: int) -> dict[object, tuple[float, int, tuple[int, ...]]]:
    """Bonferroni-corrected minimum local p-value per dst, capped at 1.

    The change point comes from the series of the monitor holding the minimum;
    it is recomputed from the transmitted series since reports do not carry it.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    best: dict = {}
    for report in reports:
        for entry in report.entries:
            cur = best.get(entry.dst)
            if cur is None or (entry.p_value, report.monitor_id) < (cur[0], cur[1]):
                best[entry.dst] = (entry.p_value, report.monitor_id, entry.series)
    out = {}
    for dst, (p, mon, series) in best.items():
        out[dst] = (min(1.0, K * p), test_series(series).change_point, (mon,))
    return out


def btoprank_decide(reports: Iterable[MonitorReport], alpha: float, K: int) -> list[Alarm]:
    """Alarm iff ``K * min_k p_k < alpha``; ``K`` is the total number of monitors."""
    _check_alpha(alpha)
    reports = list(reports)
    window_id = _window_id(reports)
    alarms = [
        Alarm(dst, window_id, p, r_hat, mons, "btoprank")
        for dst, (p, r_hat, mons) in btoprank_scores(reports, K).items()
        if p < alpha
    ]
    return sorted(alarms, key=lambda a: (a.p_value, a.dst))

