"""Command-line entry point: ``dtoprank simulate | detect | collect | evaluate``.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dtoprank.collector import ProtocolError, btoprank_decide, global_detect
from dtoprank.evaluation import DetectorParams, evaluate
from dtoprank.formats import (
    TRUTH_COLUMNS,
    FormatError,
    read_flows,
    read_reports,
    write_alarms,
    write_flows,
    write_reports,
    write_table,
)
from dtoprank.monitor import bin_flows, local_detect, select_top_d, window_index, window_start
from dtoprank.netsim import ConfigError, build_topology, gen_traffic, load_config

log = logging.getLogger("dtoprank")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_PROTOCOL = 0, 2, 3, 4


class ValidationError(ValueError):
    pass


def _config_overrides(args) -> dict:
    keys = ["n_nodes", "edge_prob", "D", "K", "N", "N_a", "P", "tau", "eta", "target_node",
            "graph_seed", "delta", "placement"]
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "exclude_edge", None):
        out["exclude_edge"] = tuple(args.exclude_edge)
    return out


def _add_sim_flags(p):
    p.add_argument("--config", type=Path, help="JSON file of simulation parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-nodes", dest="n_nodes", type=int)
    p.add_argument("--edge-prob", dest="edge_prob", type=float)
    p.add_argument("--D", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--N-a", dest="N_a", type=int)
    p.add_argument("--P", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--target-node", dest="target_node", type=int)
    p.add_argument("--graph-seed", dest="graph_seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--placement", choices=["route", "hash"])
    p.add_argument("--exclude-edge", dest="exclude_edge", type=int, nargs=2, metavar=("A", "B"),
                   help="never place a monitor on this edge")


def cmd_simulate(args) -> int:
    config = load_config(args.config, **_config_overrides(args))
    if args.replications < 1:
        raise ValidationError("--replications must be >= 1")
    topology = build_topology(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(config.seed).spawn(args.replications)
    truth_rows = []
    for r, seed in enumerate(seeds):
        rep = gen_traffic(config, topology, seed)
        rep_dir = out / f"rep{r:04d}"
        rep_dir.mkdir(exist_ok=True)
        for k, flows in enumerate(rep.flows):
            edge = rep.topology.monitor_edges[k]
            write_flows(rep_dir / f"monitor{k:02d}.csv", flows,
                        meta={"seed": config.seed, "replication": r, "monitor": k,
                              "edge": f"{edge[0]}-{edge[1]}"})
        truth_rows.append({"replication": r, "attacked_dst": rep.truth.attacked_dst,
                           "tau": rep.truth.change_bin,
                           "attacker_count": len(rep.truth.attacker_srcs)})
        (rep_dir / "topology.json").write_text(json.dumps({
            "edges": topology.edges, "monitor_edges": rep.topology.monitor_edges}))
    write_table(out / "ground_truth.csv", truth_rows, TRUTH_COLUMNS, meta={"seed": config.seed})
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    log.info("wrote %d replication(s) of %d monitor files to %s",
             args.replications, config.K, out)
    return EXIT_OK


def cmd_detect(args) -> int:
    if args.P < 2:
        raise ValidationError(f"--P must be >= 2, got {args.P}")
    for name in ("M", "S"):
        if getattr(args, name) < 1:
            raise ValidationError(f"--{name} must be >= 1")
    if args.d < 0 or not args.delta > 0:
        raise ValidationError("--d must be >= 0 and --delta positive")
    reports = []
    for monitor_id, path in enumerate(args.flows):
        flows = read_flows(path)
        if len(flows) == 0:
            continue
        windows = window_index(flows.start_time, args.origin, args.delta, args.P)
        for w in np.unique(windows[windows >= 0]):
            sel = windows == w
            window = bin_flows(flows.take(sel), window_start(int(w), args.origin, args.delta, args.P),
                               args.delta, args.P, window_id=int(w))
            results = local_detect(window, args.M, args.S)
            reports.append(select_top_d(results, args.d, monitor_id=monitor_id, window_id=int(w)))
    meta = {"seed": args.seed, "M": args.M, "S": args.S, "d": args.d, "delta": args.delta,
            "P": args.P}
    write_reports(args.out, reports, meta=meta)
    return EXIT_OK


def cmd_collect(args) -> int:
    if not 0 < args.alpha < 1:
        raise ValidationError(f"--alpha must lie in (0, 1), got {args.alpha}")
    methods = ["dtoprank", "btoprank"] if args.method == "both" else [args.method]
    if "btoprank" in methods and args.K is None:
        raise ValidationError("--K (total number of monitors) is required for btoprank")
    if args.K is not None and args.K < 1:
        raise ValidationError("--K must be >= 1")
    reports = read_reports(args.reports)
    by_window: dict[int, list] = {}
    for r in reports:
        by_window.setdefault(r.window_id, []).append(r)
    alarms = []
    for w in sorted(by_window):
        if "dtoprank" in methods:
            alarms += global_detect(by_window[w], args.alpha)
        if "btoprank" in methods:
            alarms += btoprank_decide(by_window[w], args.alpha, args.K)
    write_alarms(args.out, alarms, meta={"seed": args.seed, "alpha": args.alpha,
                                         "method": args.method, "K": args.K})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_config(args.config, **_config_overrides(args))
    if args.R < 1:
        raise ValidationError("--R must be >= 1")
    params = DetectorParams(M=args.M, S=args.S, d=args.d)
    roc_rows, auc_rows, _ = evaluate(config, args.etas, args.R, params=params, jobs=args.jobs,
                                     positives=args.positives)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": config.seed, "R": args.R, "M": args.M, "S": args.S, "d": args.d,
            "positives": args.positives, "negatives": "tested_at_collector"}
    write_table(out / "roc.csv", roc_rows, ["method", "eta", "alpha", "fa_rate", "det_rate"], meta)
    write_table(out / "auc.csv", auc_rows, ["method", "eta", "auc"], meta)
    write_table(out / "denominators.csv", auc_rows,
                ["method", "eta", "positives", "tested_positives", "negatives"], meta)
    for row in auc_rows:
        print(f"{row['method']:9s} eta={row['eta']:<4g} auc={row['auc']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtoprank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate per-monitor flow files")
    _add_sim_flags(p)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run monitors on flow files (one file per monitor)")
    p.add_argument("flows", nargs="*", type=Path)
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--S", type=int, default=60)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--P", type=int, default=60)
    p.add_argument("--origin", type=float, default=0.0, help="start time of window 0")
    p.add_argument("--seed", type=int, default=0, help="echoed in the output header")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("collect", help="aggregate monitor reports and raise alarms")
    p.add_argument("reports", nargs="*", type=Path)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", choices=["dtoprank", "btoprank", "both"], default="dtoprank")
    p.add_argument("--K", type=int)
    p.add_argument("--seed", type=int, default=0, help="echoed in the output header")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("evaluate", help="Monte-Carlo ROC/AUC study")
    _add_sim_flags(p)
    p.add_argument("--R", type=int, default=200)
    p.add_argument("--etas", type=float, nargs="+", default=[1.2, 1.5])
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--S", type=int, default=60)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--positives", choices=["all", "tested"], default="all")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValidationError, ConfigError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
