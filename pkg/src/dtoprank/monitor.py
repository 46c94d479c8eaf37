"""Per-monitor processing: binning, Top-M record filtering, censoring, local tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from dtoprank.censored import CensoredSeries, TestResult, test_series

__all__ = [
    "FlowRecord",
    "FlowTable",
    "BinnedWindow",
    "TopMFilter",
    "ReportEntry",
    "MonitorReport",
    "bin_flows",
    "top_m_filter",
    "build_censored_series",
    "local_detect",
    "select_top_d",
    "process_window",
]


@dataclass(frozen=True)
class FlowRecord:
    start_time: float
    end_time: float
    src: object
    dst: object
    syn_count: int

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError(f"flow ends before it starts: {self.start_time} > {self.end_time}")
        if self.syn_count < 0:
            raise ValueError(f"negative SYN count: {self.syn_count}")


@dataclass
class FlowTable:
    """Column-oriented batch of flow records.

    The simulator produces hundreds of thousands of flows per window, which is
    far too many for one Python object each; this holds the same fields as
    parallel arrays.
    """

    start_time: np.ndarray
    end_time: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    syn_count: np.ndarray

    def __post_init__(self):
        self.start_time = np.asarray(self.start_time, dtype=float)
        self.end_time = np.asarray(self.end_time, dtype=float)
        self.src = np.asarray(self.src)
        self.dst = np.asarray(self.dst)
        self.syn_count = np.asarray(self.syn_count, dtype=np.int64)
        n = self.start_time.size
        if not all(a.shape == (n,) for a in (self.end_time, self.src, self.dst, self.syn_count)):
            raise ValueError("flow columns must be 1-d and of equal length")

    def __len__(self):
        return int(self.start_time.size)

    @classmethod
    def from_records(cls, records: Iterable[FlowRecord]) -> "FlowTable":
        records = list(records)
        if not records:
            return cls.empty()
        return cls(
            start_time=[r.start_time for r in records],
            end_time=[r.end_time for r in records],
            src=[r.src for r in records],
            dst=[r.dst for r in records],
            syn_count=[r.syn_count for r in records],
        )

    @classmethod
    def empty(cls) -> "FlowTable":
        return cls(np.empty(0), np.empty(0), np.empty(0, dtype=np.int64),
                   np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))

    def records(self) -> list[FlowRecord]:
        return [
            FlowRecord(float(s), float(e), a.item() if hasattr(a, "item") else a,
                       b.item() if hasattr(b, "item") else b, int(c))
            for s, e, a, b, c in zip(self.start_time, self.end_time, self.src, self.dst,
                                     self.syn_count)
        ]

    def take(self, index) -> "FlowTable":
        return FlowTable(self.start_time[index], self.end_time[index], self.src[index],
                         self.dst[index], self.syn_count[index])


@dataclass
class BinnedWindow:
    """Per-destination SYN counts over ``P`` consecutive bins of ``delta`` seconds.

    ``dsts`` is sorted ascending and row ``i`` of ``counts`` belongs to
    ``dsts[i]``.  Destinations with no SYN packet in the window are absent.
    """

    window_id: int
    dsts: np.ndarray
    counts: np.ndarray
    delta: float
    P: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1, self.P)
        self.dsts = np.asarray(self.dsts)
        if self.dsts.shape != (self.counts.shape[0],):
            raise ValueError("one destination per count row required")

    @property
    def counts_map(self) -> dict:
        return {_scalar(d): row for d, row in zip(self.dsts, self.counts)}

    def series(self, dst) -> np.ndarray:
        idx = np.searchsorted(self.dsts, dst)
        if idx < self.dsts.size and self.dsts[idx] == dst:
            return self.counts[idx]
        return np.zeros(self.P, dtype=np.int64)


@dataclass
class TopMFilter:
    """Output of record filtering.

    ``order[r, t]`` is the row (into the window) of the destination with the
    ``r+1``-th largest count in bin ``t``, or -1 when fewer than ``r+1``
    destinations had a nonzero count there.
    """

    order: np.ndarray
    threshold: np.ndarray
    window: BinnedWindow = field(repr=False)

    def members(self, t: int) -> list:
        """Destinations kept in (0-based) bin ``t``, largest count first."""
        rows = self.order[:, t]
        return [_scalar(self.window.dsts[r]) for r in rows if r >= 0]

    def retained_values(self) -> np.ndarray:
        """The only per-bin values a monitor needs to store, -1 for empty slots."""
        rows = np.where(self.order >= 0, self.order, 0)
        vals = self.window.counts[rows, np.arange(self.window.P)[None, :]]
        return np.where(self.order >= 0, vals, -1)


@dataclass(frozen=True)
class ReportEntry:
    dst: object
    series: CensoredSeries
    p_value: float


@dataclass
class MonitorReport:
    monitor_id: int
    window_id: int
    entries: list[ReportEntry]

    @property
    def P(self) -> int | None:
        return self.entries[0].series.P if self.entries else None


def _scalar(x):
    return x.item() if isinstance(x, np.generic) else x


def bin_flows(flows, window_start: float, delta: float, P: int, window_id: int = 0) -> BinnedWindow:
    """Count SYN packets per destination and bin.

    Each flow's SYN packets are attributed to the bin holding its start time.
    Flows starting outside ``[window_start, window_start + P*delta)`` are
    ignored.
    """
    if not delta > 0:
        raise ValueError(f"bin width must be positive, got {delta}")
    if P < 2:
        raise ValueError(f"need at least 2 bins per window, got P={P}")
    table = flows if isinstance(flows, FlowTable) else FlowTable.from_records(flows)
    if len(table) == 0:
        return BinnedWindow(window_id, np.empty(0, dtype=np.int64),
                            np.zeros((0, P), dtype=np.int64), delta, P)

    bins = np.floor((table.start_time - window_start) / delta)
    keep = (bins >= 0) & (bins < P) & (table.syn_count > 0)
    bins = bins[keep].astype(np.int64)
    dsts, inverse = np.unique(table.dst[keep], return_inverse=True)
    flat = np.bincount(inverse.ravel() * P + bins, weights=table.syn_count[keep],
                       minlength=dsts.size * P)
    counts = np.rint(flat).astype(np.int64).reshape(dsts.size, P)
    return BinnedWindow(window_id, dsts, counts, delta, P)


def top_m_filter(window: BinnedWindow, M: int) -> TopMFilter:
    """Keep the M largest nonzero counts of every bin.

    Ties are broken by ascending destination identifier.  The threshold of a
    bin is the smallest kept count, or 0 when nothing is kept.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    counts = window.counts
    P = window.P
    if counts.shape[0] == 0:
        return TopMFilter(np.full((0, P), -1, dtype=np.int64), np.zeros(P, dtype=np.int64), window)
    k = min(M, counts.shape[0])
    # Rows are in ascending dst order, so a stable sort on -count breaks ties by dst.
    order = np.argsort(-counts, axis=0, kind="stable")[:k]
    top = np.take_along_axis(counts, order, axis=0)
    order = np.where(top > 0, order, -1)
    n_kept = (order >= 0).sum(axis=0)
    threshold = np.where(n_kept > 0, top[np.maximum(n_kept - 1, 0), np.arange(P)], 0)
    return TopMFilter(order.astype(np.int64), threshold.astype(np.int64), window)


def _selected_rows(filt: TopMFilter, S: int) -> np.ndarray:
    # Rank-major enumeration: i_1(1..P), i_2(1..P), ... without repeats.
    flat = filt.order.ravel()
    flat = flat[flat >= 0]
    _, first = np.unique(flat, return_index=True)
    return flat[np.sort(first)][:S]


def build_censored_series(window: BinnedWindow, filt: TopMFilter, S: int) -> list[tuple]:
    """Censored series for up to ``S`` destinations seen in some Top-M set.

    Inside the Top-M set of a bin the count is exact; outside it is only known
    to lie in ``[0, threshold]``.
    """
    rows = _selected_rows(filt, S)
    if rows.size == 0:
        return []
    P = window.P
    in_top = np.zeros((window.counts.shape[0], P), dtype=bool)
    valid = filt.order >= 0
    in_top[filt.order[valid], np.nonzero(valid)[1]] = True

    out = []
    for r in rows:
        exact = in_top[r]
        upper = np.where(exact, window.counts[r], filt.threshold)
        lower = np.where(exact, window.counts[r], 0)
        out.append((_scalar(window.dsts[r]), CensoredSeries(lower, upper)))
    return out


def local_detect(window: BinnedWindow, M: int, S: int) -> list[tuple[object, CensoredSeries, TestResult]]:
    filt = top_m_filter(window, M)
    return [(dst, series, test_series(series))
            for dst, series in build_censored_series(window, filt, S)]


def select_top_d(results: Sequence[tuple], d: int, monitor_id: int = 0,
                 window_id: int = 0) -> MonitorReport:
    """Report the ``d`` series with the smallest p-values (ties: ascending dst)."""
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    ranked = sorted(results, key=lambda r: (r[2].p_value, r[0]))
    entries = [ReportEntry(dst, series, res.p_value) for dst, series, res in ranked[:d]]
    return MonitorReport(monitor_id, window_id, entries)


def process_window(flows, window_start: float, *, delta: float = 1.0, P: int = 60,
                   M: int = 10, S: int = 60, d: int = 1, monitor_id: int = 0,
                   window_id: int = 0) -> MonitorReport:
    """Full local pipeline for one monitor and one window."""
    window = bin_flows(flows, window_start, delta, P, window_id=window_id)
    return select_top_d(local_detect(window, M, S), d, monitor_id=monitor_id,
                        window_id=window_id)


def window_index(start_times: np.ndarray, origin: float, delta: float, P: int) -> np.ndarray:
    """Index of the consecutive, disjoint window holding each start time."""
    return np.floor((np.asarray(start_times, dtype=float) - origin) / (delta * P)).astype(np.int64)


def window_start(window_id: int, origin: float, delta: float, P: int) -> float:
    return origin + window_id * delta * P

