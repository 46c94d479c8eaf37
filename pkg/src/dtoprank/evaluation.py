"""Monte-Carlo driver: replications, ROC curves, AUC and communication volume."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from dtoprank.collector import btoprank_scores, global_scores
from dtoprank.monitor import MonitorReport, process_window
from dtoprank.netsim import SimConfig, Topology, build_topology, gen_traffic

__all__ = [
    "METHODS",
    "DetectorParams",
    "ReplicationResult",
    "RocPoint",
    "default_alpha_grid",
    "run_replication",
    "run_replications",
    "score_table",
    "roc_curve",
    "empirical_roc",
    "auc",
    "comms_accounting",
    "evaluate",
]

log = logging.getLogger(__name__)

METHODS = ("dtoprank", "btoprank")

# Untested destinations can never alarm, whatever the threshold.
UNTESTED_SCORE = float("inf")


@dataclass(frozen=True)
class DetectorParams:
    M: int = 10
    S: int = 60
    d: int = 1


@dataclass(frozen=True)
class RocPoint:
    alpha: float
    false_alarm_rate: float
    detection_rate: float


@dataclass
class ReplicationResult:
    index: int
    attacked_dst: int
    scores: dict[str, dict[object, float]]
    n_entries: int
    n_flows: int
    target_edge_monitored: bool
    reports: list[MonitorReport] = field(default_factory=list, repr=False)


def default_alpha_grid() -> np.ndarray:
    return np.logspace(-6, np.log10(0.5), 60)


def run_replication(config: SimConfig, topology: Topology, seed, index: int = 0,
                    params: DetectorParams = DetectorParams(),
                    keep_reports: bool = False) -> ReplicationResult:
    rep = gen_traffic(config, topology, seed)
    reports = [
        process_window(flows, 0.0, delta=config.delta, P=config.P, M=params.M, S=params.S,
                       d=params.d, monitor_id=k)
        for k, flows in enumerate(rep.flows)
    ]
    scores = {
        "dtoprank": {dst: p for dst, (p, _, _) in global_scores(reports).items()},
        "btoprank": {dst: p for dst, (p, _, _) in btoprank_scores(reports, max(config.K, 1)).items()},
    }
    target_edges = {e for (a, b), route in topology.routes.items()
                    if b == config.target_node for e in route[-1:]}
    return ReplicationResult(
        index=index,
        attacked_dst=rep.truth.attacked_dst,
        scores=scores,
        n_entries=sum(len(r.entries) for r in reports),
        n_flows=rep.n_flows,
        target_edge_monitored=bool(target_edges & set(rep.topology.monitor_edges)),
        reports=reports if keep_reports else [],
    )


def _run_chunk(args):
    config, seeds, indices, params = args
    topology = build_topology(config)
    return [run_replication(config, topology, s, i, params) for s, i in zip(seeds, indices)]


def run_replications(config: SimConfig, R: int, seed: int | None = None,
                     params: DetectorParams = DetectorParams(), jobs: int = 1) -> list[ReplicationResult]:
    """Simulate and score ``R`` independent windows on one shared graph.

    Replication ``i`` always uses the ``i``-th child of the seed sequence, so
    results do not depend on ``jobs``.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    seed = config.seed if seed is None else seed
    seeds = np.random.SeedSequence(seed).spawn(R)
    indices = list(range(R))
    if jobs <= 1:
        return _run_chunk((config, seeds, indices, params))
    chunks = [(config, seeds[j::jobs], indices[j::jobs], params) for j in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = [r for part in pool.map(_run_chunk, chunks) for r in part]
    return sorted(results, key=lambda r: r.index)


def score_table(results: Iterable[ReplicationResult], method: str, positives: str = "all"):
    """Flatten replications into ``(scores, labels, groups)`` arrays.

    Negatives are the destinations other than the target that were tested at
    the collector.  With ``positives="all"`` every replication contributes its
    target, scored ``UNTESTED_SCORE`` (a certain miss) when no monitor
    reported it; with ``positives="tested"`` the target only counts in
    replications where it was tested, the same footing as the negatives.
    """
    if positives not in ("all", "tested"):
        raise ValueError(f"positives must be 'all' or 'tested', got {positives!r}")
    scores, labels, groups = [], [], []
    for res in results:
        per_dst = res.scores[method]
        if res.attacked_dst in per_dst or positives == "all":
            scores.append(per_dst.get(res.attacked_dst, UNTESTED_SCORE))
            labels.append(True)
            groups.append(res.index)
        for dst, p in per_dst.items():
            if dst != res.attacked_dst:
                scores.append(p)
                labels.append(False)
                groups.append(res.index)
    return np.array(scores, dtype=float), np.array(labels, dtype=bool), np.array(groups)


def roc_curve(scores, labels, alpha_grid: Sequence[float] | None = None,
              groups=None) -> list[RocPoint]:
    """False-alarm and detection rates of the rule ``score < alpha``.

    With ``groups`` the rates are computed per group (replication) and then
    averaged over the groups holding at least one item of the relevant class.
    The curve is closed with the points (0, 0) and (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if not labels.any() or labels.all():
        raise ValueError("labels need at least one positive and one negative")
    grid = default_alpha_grid() if alpha_grid is None else np.sort(np.asarray(alpha_grid, dtype=float))
    flagged = scores[None, :] < grid[:, None]

    def rate(mask):
        if groups is None:
            return flagged[:, mask].mean(axis=1)
        g = np.asarray(groups)[mask]
        uniq, inv = np.unique(g, return_inverse=True)
        hits = np.zeros((grid.size, uniq.size))
        np.add.at(hits.T, inv, flagged[:, mask].T)
        sizes = np.bincount(inv, minlength=uniq.size)
        return (hits / sizes).mean(axis=1)

    fa = rate(~labels)
    det = rate(labels)
    curve = [RocPoint(0.0, 0.0, 0.0)]
    curve += [RocPoint(float(a), float(f), float(d)) for a, f, d in zip(grid, fa, det)]
    curve.append(RocPoint(1.0, 1.0, 1.0))
    return curve


def empirical_roc(scores, labels) -> list[RocPoint]:
    """ROC over every distinct score used as threshold (rule ``score <= alpha``).

    Unlike the fixed alpha grid this reaches (1, 1) only through thresholds a
    method can actually take, so it is the curve AUC is computed from.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if not labels.any() or labels.all():
        raise ValueError("labels need at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    fp = np.cumsum(~lab)
    last = np.r_[s[1:] != s[:-1], True]
    curve = [RocPoint(0.0, 0.0, 0.0)]
    curve += [RocPoint(float(a), float(f), float(d))
              for a, f, d in zip(s[last], fp[last] / fp[-1], tp[last] / tp[-1])]
    return curve


def auc(curve: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the (false alarm, detection) polyline."""
    fa = np.array([p.false_alarm_rate for p in curve])
    det = np.array([p.detection_rate for p in curve])
    order = np.lexsort((det, fa))
    fa, det = fa[order], det[order]
    return float(np.sum(np.diff(fa) * (det[1:] + det[:-1]) / 2.0))


def comms_accounting(reports: Iterable[MonitorReport], n_flows: int = 0, P: int | None = None) -> dict:
    """Scalars shipped to the collector for one window.

    DTopRank sends ``2P`` bounds per reported series, BTopRank a single
    p-value per entry, and a centralised detector five fields per flow.
    """
    reports = list(reports)
    entries = [e for r in reports for e in r.entries]
    if P is None:
        P = entries[0].series.P if entries else 0
    dtop = len(entries) * 2 * P
    central = 5 * int(n_flows)
    return {
        "entries": len(entries),
        "dtoprank": dtop,
        "btoprank": len(entries),
        "centralized": central,
        "ratio": central / dtop if dtop else float("inf"),
    }


def evaluate(config: SimConfig, etas: Sequence[float], R: int, seed: int | None = None,
             params: DetectorParams = DetectorParams(), alpha_grid=None, jobs: int = 1,
             methods: Sequence[str] = METHODS, positives: str = "all"):
    """ROC and AUC tables for each attack multiplier.

    Returns ``(roc_rows, auc_rows, results)`` where the rows are dicts with the
    columns ``method,eta,alpha,fa_rate,det_rate`` and ``method,eta,auc`` (plus
    the denominators behind each rate).  ROC rows follow the alpha grid; AUC
    comes from the full empirical ROC.
    """
    grid = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid)
    roc_rows, auc_rows, all_results = [], [], {}
    for eta in etas:
        results = run_replications(config.replace(eta=float(eta)), R, seed, params, jobs)
        all_results[float(eta)] = results
        n_tested = sum(r.attacked_dst in r.scores["dtoprank"] for r in results)
        for method in methods:
            scores, labels, _ = score_table(results, method, positives)
            curve = roc_curve(scores, labels, grid)
            n_neg = int((~labels).sum())
            log.info("%s eta=%g: %d positives (%d tested), %d tested negatives",
                     method, eta, int(labels.sum()), n_tested, n_neg)
            for pt in curve:
                roc_rows.append({"method": method, "eta": float(eta), "alpha": pt.alpha,
                                 "fa_rate": pt.false_alarm_rate, "det_rate": pt.detection_rate})
            auc_rows.append({"method": method, "eta": float(eta),
                             "auc": auc(empirical_roc(scores, labels)),
                             "positives": int(labels.sum()), "tested_positives": n_tested,
                             "negatives": n_neg})
    return roc_rows, auc_rows, all_results
