"""Experiment configs, run directories, grids and report tables.

A run directory is named by a digest of the full experiment config and
holds everything needed to recompute metrics offline:

    config.yaml      the experiment config, canonicalised
    partition.csv    account,shard
    chain/*.jsonl    finalized chains (reference/coordinator and every worker shard)
    views.json       per-replica finalized (height, hash) sequences
    events.jsonl     protocol observations, in simulation order
    injections.json  ctx and intra injection times
    metrics.csv      metric,value summary
    samples.csv      metric,id,value raw samples
    scan.json        safety violations found by the scanner
    messages.csv     only with trace_messages: time,from,to,kind,arrival
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import yaml

from . import metrics, scanner
from .core import ConfigError, PartitionMap, ReplicaId
from .netsim import PRESETS, FaultScript, RunConfig, TimingConfig, run
from .partition import partition_graph, read_partition, write_partition
from .workload import SyntheticParams, build_graph, emit_workload, generate_synthetic, read_trace

log = logging.getLogger(__name__)

RUNS_ENV = "RIVET_RUNS"

# trace used for the output-rate comparison: moderate write skew plus a set of
# hot accounts that many ctxs only read (price feeds, registries)
CONTENTION = {"accounts": 3000, "records": 20000, "zipf": 0.8, "communities": 6,
              "hot_accounts": 100, "hot_prob": 0.2, "seed": 1}
# plain locality trace, no hot accounts
LOCALITY = {"accounts": 3000, "records": 20000, "zipf": 0.9, "communities": 6, "seed": 1}


@dataclass
class ExperimentConfig:
    protocol: str = "rivet"
    k: int = 6
    f: int = 3
    i_w: float = 5.0
    i_r: float = 10.0
    delta: float = 1.0
    inject: int = 100
    intra: int = 10
    seed: int = 0
    horizon_blocks: int = 50
    warmup: int = 5
    workload: dict = field(default_factory=lambda: {"synthetic": dict(LOCALITY)})
    faults: dict = field(default_factory=dict)
    async_windows: list = field(default_factory=list)
    async_cap: float = 3.0
    jitter: float = 0.1
    uniform_delay: float | None = None
    max_ctx_per_block: int | None = None
    trace_messages: bool = False

    def __post_init__(self):
        if self.protocol not in ("rivet", "tpc"):
            raise ConfigError(f"protocol must be rivet or tpc, got {self.protocol!r}")
        if self.k < 1 or self.f < 0:
            raise ConfigError("need k >= 1 and f >= 0")
        if self.horizon_blocks <= self.warmup:
            raise ConfigError("horizon must exceed the warmup")
        self.async_windows = [list(map(float, w)) for w in self.async_windows]

    @property
    def bir(self) -> float:
        return self.i_r / self.i_w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config fields: {extra}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def timing(self) -> TimingConfig:
        return TimingConfig(delta=self.delta, i_w=self.i_w, i_r=self.i_r,
                            async_windows=tuple(tuple(w) for w in self.async_windows),
                            async_cap=self.async_cap, jitter=self.jitter, uniform_delay=self.uniform_delay)

    def run_config(self) -> RunConfig:
        return RunConfig(protocol=self.protocol, f=self.f, k=self.k, timing=self.timing(), inject=self.inject,
                         intra=self.intra, max_ctx_per_block=self.max_ctx_per_block,
                         trace_messages=self.trace_messages)

    def fault_script(self) -> FaultScript:
        spec = self.faults or {}
        sc = self.run_config().shard_config()
        script = FaultScript.from_json(spec.get("script"))
        preset = spec.get("preset")
        if preset:
            if preset not in PRESETS:
                raise ConfigError(f"unknown fault preset {preset!r}; choose from {sorted(PRESETS)}")
            byz = FaultScript.byzantine(sc, PRESETS[preset], seed=self.seed, shards=spec.get("shards"),
                                        count=spec.get("count"))
            script = byz.merged(script)
        for s, i, at in spec.get("crash") or []:
            script = script.merged(FaultScript.crash([ReplicaId(s, i)], float(at)))
        return script


def runs_root(root=None) -> Path:
    return Path(root or os.environ.get(RUNS_ENV) or "runs")


# ---------------------------------------------------------------------------
# workloads


def _canon(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


@lru_cache(maxsize=16)
def _records(spec_json: str):
    spec = json.loads(spec_json)
    if "trace" in spec:
        return tuple(read_trace(spec["trace"]))
    params = dict(spec.get("synthetic", {}))
    if "multi" in params:
        params["multi"] = tuple(params["multi"])
    return tuple(generate_synthetic(SyntheticParams(**params)))


@lru_cache(maxsize=16)
def _partition(spec_json: str, k: int) -> PartitionMap:
    spec = json.loads(spec_json)
    if spec.get("partition"):
        return read_partition(spec["partition"], k)
    graph = build_graph(_records(spec_json))
    return partition_graph(graph, k, beta=spec.get("beta", 1.25), seed=spec.get("partition_seed", 0))


def build_workload(cfg: ExperimentConfig):
    spec = _canon(cfg.workload)
    records = _records(spec)
    pm = _partition(spec, cfg.k)
    return records, pm, emit_workload(list(records), pm)


# ---------------------------------------------------------------------------
# single runs


def _dumps(x) -> str:
    return json.dumps(x, sort_keys=True, separators=(",", ":"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_jsonl(path, items) -> None:
    with open(path, "w") as fh:
        for it in items:
            fh.write(_dumps(it) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_metrics(run_dir: Path, rep: metrics.MetricsReport) -> None:
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in sorted(rep.summary):
            w.writerow([k, _fmt(rep.summary[k])])
    with open(run_dir / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "id", "value"])
        for name in sorted(rep.samples):
            for ident, v in rep.samples[name]:
                w.writerow([name, ident, _fmt(v)])


def read_metrics(run_dir) -> dict:
    out = {}
    with open(Path(run_dir) / "metrics.csv") as fh:
        for row in csv.DictReader(fh):
            out[row["metric"]] = row["value"]
    return out


@dataclass
class Outcome:
    config: ExperimentConfig
    run_dir: Path | None
    metrics: metrics.MetricsReport
    violations: list
    result: object = None  # RunResult, dropped when shipped across processes


def run_experiment(cfg: ExperimentConfig, root=None, write: bool = True, keep_result: bool = True) -> Outcome:
    records, pm, wl = build_workload(cfg)
    res = run(cfg.run_config(), wl, cfg.fault_script(), seed=cfg.seed, horizon_blocks=cfg.horizon_blocks)
    rep = metrics.compute(cfg.protocol, cfg.k, cfg.timing(), cfg.horizon_blocks, res.chain_logs,
                          res.observations, res.injections, cfg.warmup)
    viol = scanner.scan_result(res)
    run_dir = None
    if write:
        run_dir = runs_root(root) / f"{cfg.protocol}-{cfg.digest()}"
        save_run(run_dir, cfg, pm, res, rep, viol)
        log.info("run %s: %d violations", run_dir, len(viol))
    return Outcome(cfg, run_dir, rep, viol, res if keep_result else None)


def save_run(run_dir: Path, cfg, pm, res, rep, viol) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "chain").mkdir(exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.to_yaml())
    write_partition(pm, run_dir / "partition.csv")
    for name, blocks in sorted(res.chain_logs.items()):
        write_jsonl(run_dir / "chain" / f"{name}.jsonl", blocks)
    (run_dir / "views.json").write_text(_dumps(res.views) + "\n")
    (run_dir / "honest.json").write_text(_dumps(res.honest) + "\n")
    write_jsonl(run_dir / "events.jsonl", res.observations)
    (run_dir / "injections.json").write_text(_dumps(res.injections) + "\n")
    write_metrics(run_dir, rep)
    (run_dir / "scan.json").write_text(_dumps([v.to_json() for v in viol]) + "\n")
    if res.messages is not None:
        with open(run_dir / "messages.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "from", "to", "kind", "arrival"])
            for t, a, b, kind, arr in res.messages:
                w.writerow([repr(t), a, b, kind, repr(arr)])


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    chain = {p.stem: read_jsonl(p) for p in sorted((run_dir / "chain").glob("*.jsonl"))}
    cfg = ExperimentConfig.from_yaml(run_dir / "config.yaml")
    return {
        "config": cfg,
        "partition": read_partition(run_dir / "partition.csv", cfg.k),
        "chain_logs": chain,
        "views": json.loads((run_dir / "views.json").read_text()),
        "honest": json.loads((run_dir / "honest.json").read_text()),
        "events": read_jsonl(run_dir / "events.jsonl"),
        "injections": json.loads((run_dir / "injections.json").read_text()),
    }


def recompute(run_dir) -> metrics.MetricsReport:
    d = load_run(run_dir)
    cfg = d["config"]
    return metrics.compute(cfg.protocol, cfg.k, cfg.timing(), cfg.horizon_blocks, d["chain_logs"], d["events"],
                           d["injections"], cfg.warmup)


def scan_dir(run_dir) -> list:
    d = load_run(run_dir)
    execs = [o for o in d["events"] if o["kind"] == "ctx_exec"]
    return scanner.scan(d["config"].protocol, d["chain_logs"], d["partition"], d["views"], execs, d["honest"])


# ---------------------------------------------------------------------------
# grids and report tables

GRID_COLUMNS = ["protocol", "k", "f", "i_w", "i_r", "bir", "inject", "seed", "run", "violations"]
REPORT_METRICS = ["ctx_latency_mean", "ctx_latency_first_mean", "ctx_censored", "output_rate_mean",
                  "commit_fraction", "next_block_inclusion", "liveness_ok_fraction", "intra_latency_mean",
                  "data_download_mean", "lock_hold_mean", "conflict_window_mean"]


def _grid_one(args):
    cfg_dict, root = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    out = run_experiment(cfg, root, write=root is not None, keep_result=False)
    row = {"protocol": cfg.protocol, "k": cfg.k, "f": cfg.f, "i_w": cfg.i_w, "i_r": cfg.i_r, "bir": cfg.bir,
           "inject": cfg.inject, "seed": cfg.seed, "run": out.run_dir.name if out.run_dir else "",
           "violations": len(out.violations)}
    for m in REPORT_METRICS:
        row[m] = out.metrics.summary.get(m, float("nan"))
    return row


def grid_configs(base: ExperimentConfig, protocols=("rivet", "tpc"), birs=(2, 3, 4), injects=(100, 200, 400),
                 seeds=(0,)) -> list:
    out = []
    for p in protocols:
        for b in birs:
            for inj in injects:
                for s in seeds:
                    out.append(replace(base, protocol=p, i_r=base.i_w * b, inject=inj, seed=s))
    return out


def run_grid(configs, root=None, workers: int | None = None) -> list:
    jobs = [(c.to_dict(), str(root) if root is not None else None) for c in configs]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_grid_one(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_grid_one, jobs))


def write_rows(path, rows, columns=None) -> None:
    columns = columns or GRID_COLUMNS + REPORT_METRICS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_rows(path) -> list:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _num(x):
    try:
        return float(x)
    except (TypeError, ValueError):
        return float("nan")


def report_tables(rows) -> dict:
    """Average over seeds into plot-ready tables keyed by (protocol, bir, inject).

    latency.csv: ctx latency per BIR and injection rate; output.csv: ctxs per
    reference block; commit.csv: Rivet commit fraction and next-block inclusion.
    """
    groups: dict = {}
    for r in rows:
        key = (r["protocol"], _num(r["bir"]), int(_num(r["inject"])))
        groups.setdefault(key, []).append(r)

    def avg(rs, m):
        xs = [_num(r.get(m)) for r in rs]
        xs = [x for x in xs if not math.isnan(x)]
        return sum(xs) / len(xs) if xs else float("nan")

    latency, output, commit = [], [], []
    for key in sorted(groups):
        p, bir, inj = key
        rs = groups[key]
        base = {"protocol": p, "bir": bir, "inject": inj, "runs": len(rs)}
        latency.append({**base, "latency_mean": avg(rs, "ctx_latency_mean"),
                        "latency_first_mean": avg(rs, "ctx_latency_first_mean"),
                        "censored": avg(rs, "ctx_censored")})
        rate = avg(rs, "output_rate_mean")
        output.append({**base, "output_rate": rate, "output_share": rate / inj if inj else float("nan")})
        if p == "rivet":
            commit.append({**base, "commit_fraction": avg(rs, "commit_fraction"),
                           "next_block_inclusion": avg(rs, "next_block_inclusion")})
    return {"latency.csv": latency, "output.csv": output, "commit.csv": commit}


def write_report(rows, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in report_tables(rows).items():
        cols = list(table[0]) if table else ["protocol", "bir", "inject", "runs"]
        write_rows(out_dir / name, table, cols)
        written.append(out_dir / name)
    return written


__all__ = [
    "ExperimentConfig", "Outcome", "CONTENTION", "LOCALITY", "RUNS_ENV", "runs_root", "build_workload",
    "run_experiment", "save_run", "load_run", "recompute", "scan_dir", "grid_configs", "run_grid",
    "write_rows", "read_rows", "report_tables", "write_report", "write_metrics", "read_metrics",
]
