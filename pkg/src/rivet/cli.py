"""Command-line entry point: ``rivet <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .core import ConfigError, WorkloadError
from .partition import cross_fraction, intersection, partition_graph, sweep_k, write_partition
from .workload import SyntheticParams, build_graph, generate_synthetic, read_trace, write_stats, write_trace


def _ints(s: str) -> list:
    return [int(x) for x in s.split(",") if x]


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x]


def _window(s: str) -> list:
    a, b = s.split(":")
    return [float(a), float(b)]


# ---------------------------------------------------------------------------


def cmd_gen_trace(a) -> int:
    p = SyntheticParams(accounts=a.accounts, records=a.records, zipf=a.zipf, communities=a.communities,
                        locality=a.locality, hot_accounts=a.hot_accounts, hot_prob=a.hot_prob,
                        multi=tuple(_floats(a.multi)), seed=a.seed)
    recs = generate_synthetic(p)
    write_trace(recs, a.out)
    print(f"wrote {len(recs)} records to {a.out}")
    return 0


def cmd_partition(a) -> int:
    recs = read_trace(a.trace)
    pm = partition_graph(build_graph(recs), a.k, beta=a.beta, seed=a.seed)
    write_partition(pm, a.out)
    print(f"k={a.k} cut={build_graph(recs).cut(pm.assign)} cross_fraction={cross_fraction(recs, pm):.4f}")
    if a.stats:
        for name, path in sorted(write_stats(recs, pm, a.stats).items()):
            print(f"{name}: {path}")
    return 0


def cmd_sweep_k(a) -> int:
    recs = read_trace(a.trace)
    rows = sweep_k(recs, range(a.kmin, a.kmax + 1), beta=a.beta, seed=a.seed, windows=a.windows)
    out = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["k", "cross_fraction", "target"])
    for r in rows:
        w.writerow([r["k"], repr(r["cross_fraction"]), repr(r["target"])])
    if out is not sys.stdout:
        out.close()
    x = intersection(rows)
    print(f"intersection k = {x:.2f}" if x is not None else "no intersection in range", file=sys.stderr)
    return 0


def _config(a) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.from_yaml(a.config) if a.config else harness.ExperimentConfig()
    over = {}
    for name, attr in [("protocol", "protocol"), ("k", "k"), ("f", "f"), ("iw", "i_w"), ("ir", "i_r"),
                       ("delta", "delta"), ("inject", "inject"), ("intra", "intra"), ("seed", "seed"),
                       ("horizon", "horizon_blocks"), ("warmup", "warmup"), ("uniform_delay", "uniform_delay")]:
        v = getattr(a, name, None)
        if v is not None:
            over[attr] = v
    if getattr(a, "trace", None):
        wl = {"trace": str(Path(a.trace).resolve())}
        if a.partition:
            wl["partition"] = str(Path(a.partition).resolve())
        over["workload"] = wl
    elif getattr(a, "preset", None):
        over["workload"] = {"synthetic": dict(harness.CONTENTION if a.preset == "contention" else harness.LOCALITY)}
    if getattr(a, "faults", None):
        over["faults"] = {"preset": a.faults}
    if getattr(a, "async_window", None):
        over["async_windows"] = [_window(w) for w in a.async_window]
    if getattr(a, "trace_messages", False):
        over["trace_messages"] = True
    return replace(cfg, **over) if over else cfg


def cmd_run(a) -> int:
    cfg = _config(a)
    out = harness.run_experiment(cfg, a.runs_dir, keep_result=False)
    for k in sorted(out.metrics.summary):
        print(f"{k},{harness._fmt(out.metrics.summary[k])}")
    print(f"violations,{len(out.violations)}")
    print(f"run_dir,{out.run_dir}")
    return 1 if out.violations else 0


def cmd_grid(a) -> int:
    base = _config(a)
    configs = harness.grid_configs(base, protocols=a.protocols.split(","), birs=_floats(a.birs),
                                   injects=_ints(a.injects), seeds=_ints(a.seeds))
    root = harness.runs_root(a.runs_dir)
    rows = harness.run_grid(configs, root, a.workers)
    out = Path(a.out) if a.out else root / f"grid-{base.digest()}"
    out.mkdir(parents=True, exist_ok=True)
    harness.write_rows(out / "grid.csv", rows)
    for p in harness.write_report(rows, out):
        print(p)
    print(out / "grid.csv")
    return 1 if any(r["violations"] for r in rows) else 0


def cmd_scan(a) -> int:
    bad = 0
    for d in a.run_dirs:
        v = harness.scan_dir(d)
        bad += len(v)
        print(f"{d}: {len(v)} violations")
        for x in v:
            print(f"  {x.kind}: {x.detail}")
    return 1 if bad else 0


def cmd_report(a) -> int:
    path = Path(a.path)
    if path.is_dir() and (path / "config.yaml").exists():
        rep = harness.recompute(path)
        saved = harness.read_metrics(path)
        fresh = {k: harness._fmt(v) for k, v in rep.summary.items()}
        diff = sorted(k for k in set(saved) | set(fresh) if saved.get(k) != fresh.get(k))
        for k in sorted(fresh):
            print(f"{k},{fresh[k]}")
        if diff:
            print(f"mismatch with saved metrics: {diff}", file=sys.stderr)
            return 1
        return 0
    grid_csv = path / "grid.csv" if path.is_dir() else path
    rows = harness.read_rows(grid_csv)
    for p in harness.write_report(rows, a.out or grid_csv.parent):
        print(p)
    return 0


# ---------------------------------------------------------------------------


def _exp_args(p):
    p.add_argument("--config", help="YAML experiment config; flags override it")
    p.add_argument("--protocol", choices=["rivet", "tpc"])
    p.add_argument("--k", type=int)
    p.add_argument("--f", type=int)
    p.add_argument("--iw", type=float)
    p.add_argument("--ir", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--inject", type=int)
    p.add_argument("--intra", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="reference blocks")
    p.add_argument("--warmup", type=int)
    p.add_argument("--uniform-delay", dest="uniform_delay", type=float)
    p.add_argument("--trace", help="trace JSONL (default: built-in synthetic locality trace)")
    p.add_argument("--partition", help="account,shard CSV for --trace")
    p.add_argument("--preset", choices=["locality", "contention"], help="built-in synthetic trace")
    p.add_argument("--faults", choices=sorted(harness.PRESETS), help="f Byzantine replicas per shard")
    p.add_argument("--async-window", action="append", metavar="START:END")
    p.add_argument("--trace-messages", action="store_true")
    p.add_argument("--runs-dir", help=f"run root (default ${harness.RUNS_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rivet", description="sharded-chain simulator and benchmark tools")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("--accounts", type=int, default=1000)
    p.add_argument("--records", type=int, default=5000)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--communities", type=int, default=0)
    p.add_argument("--locality", type=float, default=0.9)
    p.add_argument("--hot-accounts", type=int, default=0)
    p.add_argument("--hot-prob", type=float, default=0.0)
    p.add_argument("--multi", default="0.55,0.3,0.1,0.05", help="P(1..n accounts per record)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_trace)

    p = sub.add_parser("partition", help="balanced k-way partition of a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--beta", type=float, default=1.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="directory for pair_matrix.csv and download_cdf.csv")
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("sweep-k", help="cross-shard fraction against 1/(k+1)")
    p.add_argument("--trace", required=True)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--beta", type=float, default=1.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--windows", type=int, default=1, help="average over this many contiguous block windows")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_sweep_k)

    p = sub.add_parser("run", help="one simulated experiment")
    _exp_args(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("grid", help="BIR x injection-rate matrix")
    _exp_args(p)
    p.add_argument("--protocols", default="rivet,tpc")
    p.add_argument("--birs", default="2,3,4")
    p.add_argument("--injects", default="100,200,400")
    p.add_argument("--seeds", default="0")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("scan", help="safety invariants over saved runs")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("report", help="recompute a run's metrics, or build tables from a grid")
    p.add_argument("path")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (ConfigError, WorkloadError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
