"""Line-oriented CSV formats exchanged between simulator, monitors and collector.

Flows:   ``start_time,end_time,src,dst,syn_count`` (header optional)
Reports: ``monitor_id,window_id,dst,p_value,lower[0..P-1],upper[0..P-1]``
Alarms:  ``window_id,dst,p_value,change_point,method``

Lines starting with ``#`` are comments; writers use them to record the seed
and parameters of the run that produced the file.
"""

from __future__ import annotations

import csv
import re
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dtoprank.censored import CensoredSeries
from dtoprank.collector import Alarm
from dtoprank.monitor import FlowTable, MonitorReport, ReportEntry

FLOW_COLUMNS = ["start_time", "end_time", "src", "dst", "syn_count"]
ALARM_COLUMNS = ["window_id", "dst", "p_value", "change_point", "method"]
TRUTH_COLUMNS = ["replication", "attacked_dst", "tau", "attacker_count"]

_INT_RE = re.compile(r"^-?\d+$")


class FormatError(ValueError):
    """Malformed input line; carries the file and 1-based line number."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


def _identifiers(tokens: list[str]) -> np.ndarray:
    """Integer array when every identifier is an integer, else strings."""
    if tokens and all(_INT_RE.match(t) for t in tokens):
        return np.array([int(t) for t in tokens], dtype=np.int64)
    return np.array(tokens, dtype=object) if tokens else np.empty(0, dtype=np.int64)


def _data_lines(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _comment(fh, meta: dict | None):
    if meta:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")


def read_flows(path) -> FlowTable:
    starts, ends, srcs, dsts, syns = [], [], [], [], []
    first = True
    for lineno, row in _data_lines(path):
        if first and row[0] == FLOW_COLUMNS[0]:
            first = False
            continue
        first = False
        if len(row) != 5:
            raise FormatError(path, lineno, f"expected 5 fields, got {len(row)}")
        try:
            start, end, syn = float(row[0]), float(row[1]), int(row[4])
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        if end < start or syn < 0 or not row[2] or not row[3]:
            raise FormatError(path, lineno, "need end >= start, syn_count >= 0 and non-empty addresses")
        starts.append(start)
        ends.append(end)
        srcs.append(row[2])
        dsts.append(row[3])
        syns.append(syn)
    if not starts:
        return FlowTable.empty()
    return FlowTable(starts, ends, _identifiers(srcs), _identifiers(dsts), syns)


def write_flows(path, flows: FlowTable, meta: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, meta)
        fh.write(",".join(FLOW_COLUMNS) + "\n")
        for s, e, a, b, c in zip(flows.start_time.tolist(), flows.end_time.tolist(),
                                 flows.src.tolist(), flows.dst.tolist(),
                                 flows.syn_count.tolist()):
            fh.write(f"{s!r},{e!r},{a},{b},{c}\n")


def write_reports(path, reports: Iterable[MonitorReport], meta: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, meta)
        for report in reports:
            for e in report.entries:
                bounds = ",".join(map(str, e.series.lower.tolist() + e.series.upper.tolist()))
                fh.write(f"{report.monitor_id},{report.window_id},{e.dst},{e.p_value!r},{bounds}\n")


def read_reports(paths: str | Path | Sequence) -> list[MonitorReport]:
    """Group report lines from one or more files by (monitor, window)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    rows = []
    for path in paths:
        for lineno, row in _data_lines(path):
            if len(row) < 8 or (len(row) - 4) % 2:
                raise FormatError(path, lineno, f"bad field count {len(row)} for a report line")
            try:
                mon, win, p = int(row[0]), int(row[1]), float(row[3])
                bounds = [int(x) for x in row[4:]]
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            half = len(bounds) // 2
            try:
                series = CensoredSeries(bounds[:half], bounds[half:])
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            rows.append((mon, win, row[2], p, series))

    dsts = _identifiers([r[2] for r in rows]).tolist()
    grouped: dict = defaultdict(list)
    for (mon, win, _, p, series), dst in zip(rows, dsts):
        grouped[(mon, win)].append(ReportEntry(dst, series, p))
    return [MonitorReport(mon, win, entries) for (mon, win), entries in sorted(grouped.items())]


def write_alarms(path, alarms: Iterable[Alarm], meta: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, meta)
        fh.write(",".join(ALARM_COLUMNS) + "\n")
        for a in alarms:
            fh.write(f"{a.window_id},{a.dst},{a.p_value!r},{a.change_point},{a.method}\n")


def read_alarms(path) -> list[dict]:
    out = []
    for lineno, row in _data_lines(path):
        if row == ALARM_COLUMNS:
            continue
        if len(row) != 5:
            raise FormatError(path, lineno, f"expected 5 fields, got {len(row)}")
        out.append({"window_id": int(row[0]), "dst": row[1], "p_value": float(row[2]),
                    "change_point": int(row[3]), "method": row[4]})
    return out


def write_table(path, rows: Sequence[dict], columns: Sequence[str], meta: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, meta)
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
