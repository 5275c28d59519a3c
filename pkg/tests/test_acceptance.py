"""Acceptance criteria C1..C11 at their stated tolerances.

Each test records one PASS/FAIL line in ``conftest.ACCEPTANCE``; the lines
are printed together at the end of the session. Simulation outcomes are
cached per config so that later criteria (C10) can look across every run.
"""

import filecmp
import math
import os
import statistics
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

from rivet.harness import CONTENTION, LOCALITY, ExperimentConfig, run_experiment
from rivet.partition import brute_force_min_cut, intersection, partition_graph, sweep_k
from rivet.workload import SyntheticParams, generate_synthetic

from conftest import ACCEPTANCE, SMALL, fig_graph, random_small_graphs
from test_crossexec import run_differential

_OUT: dict = {}

# k=6, f=3 runs: 20 reference blocks, first 5 discarded
BASE = ExperimentConfig(k=6, f=3, horizon_blocks=20, warmup=5)
SEEDS = (1, 2, 3)
SMALL_WL = {"synthetic": dict(SMALL)}


def record(cid, ok, detail):
    ACCEPTANCE[cid] = (bool(ok), detail)
    print(f"{cid} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def outcome(cfg: ExperimentConfig):
    key = cfg.digest()
    if key not in _OUT:
        _OUT[key] = run_experiment(cfg, write=False, keep_result=False)
    return _OUT[key]


def summary(cfg, name):
    return outcome(cfg).metrics.summary[name]


def _mean(cfgs, name):
    return statistics.fmean(summary(c, name) for c in cfgs)


def rivet_cfgs(ir):
    return [replace(BASE, i_r=ir, seed=s) for s in SEEDS]


# ---------------------------------------------------------------------------


def safety_configs():
    out = []
    windows = ([[10.0, 30.0]], [[5.0, 15.0], [25.0, 40.0]])
    for proto in ("rivet", "tpc"):
        for preset in ("equivocate", "tamper", "blame", "all"):
            for w in windows:
                for seed in range(7):
                    out.append(ExperimentConfig(protocol=proto, k=2 + seed % 2, f=1, seed=seed, horizon_blocks=8,
                                                warmup=2, workload=SMALL_WL, faults={"preset": preset},
                                                async_windows=w))
    return out


def test_c1_safety_under_faults():
    cfgs = safety_configs()
    bad = {}
    for c in cfgs:
        v = outcome(c).violations
        if v:
            bad[c.digest()] = [x.kind for x in v]
    ok = len(cfgs) >= 100 and not bad
    record("C1", ok, f"{len(cfgs)} faulty/async runs, {sum(map(len, bad.values()))} violations")
    assert ok, bad


def test_c2_liveness_after_stabilization():
    # synchronous runs plus one whose async window ends before measurement starts
    cfgs = rivet_cfgs(10.0) + rivet_cfgs(15.0) + [replace(BASE, seed=4, async_windows=[[10.0, 40.0]])]
    fracs = [summary(c, "liveness_ok_fraction") for c in cfgs]
    gaps = [summary(c, "liveness_max_gap") for c in cfgs]
    viol = sum(len(outcome(c).violations) for c in cfgs)
    ok = min(fracs) == 1.0 and viol == 0
    record("C2", ok, f"blocks within 7Δ: min share {min(fracs):.3f}, max gap {max(gaps):.3f} (T_f=7)")
    assert ok


def test_c3_rivet_latency_flat_in_bir():
    l2, l3 = _mean(rivet_cfgs(10.0), "ctx_latency_mean"), _mean(rivet_cfgs(15.0), "ctx_latency_mean")
    worst = max(summary(c, "ctx_latency_mean") for c in rivet_cfgs(10.0) + rivet_cfgs(15.0))
    bound = BASE.i_w + BASE.delta
    slope = (l3 - l2) / l2  # relative change per unit BIR
    ok = worst <= bound and abs(slope) <= 0.10
    record("C3", ok, f"latency BIR2={l2:.3f} BIR3={l3:.3f} worst run {worst:.3f} <= {bound}, relative slope {slope:+.4f}")
    assert ok


def test_c4_baseline_latency():
    target = BASE.i_r + BASE.i_w
    means = {inj: _mean([replace(BASE, protocol="tpc", inject=inj, seed=s) for s in SEEDS], "ctx_latency_mean")
             for inj in (100, 200)}
    ok = all(abs(m - target) <= 0.2 * target for m in means.values())
    record("C4", ok, "2PC latency " + ", ".join(f"inject {i}: {m:.2f}" for i, m in means.items())
           + f" vs I_r+I_w={target} ±20%")
    assert ok


def test_c5_output_rate_on_contention_trace():
    wl = {"synthetic": dict(CONTENTION)}
    cr = [replace(BASE, workload=wl, seed=s) for s in SEEDS[:2]]
    ct = [replace(c, protocol="tpc") for c in cr]
    r, t = _mean(cr, "output_rate_mean"), _mean(ct, "output_rate_mean")
    inj = BASE.inject
    ok = r >= 1.3 * t and r >= 0.6 * inj and t <= 0.55 * inj
    record("C5", ok, f"output per block Rivet {r:.1f} vs 2PC {t:.1f} (ratio {r / t:.2f}), inject {inj}")
    assert ok


def test_c6_commit_fraction():
    grid = {(b, inj): summary(replace(BASE, i_r=BASE.i_w * b, inject=inj, seed=1), "commit_fraction")
            for b in (2, 3, 4) for inj in (100, 200, 400)}
    idle = summary(replace(BASE, inject=0, intra=0, seed=1), "commit_fraction")
    ok = all(0.8 <= v <= 1.0 for v in grid.values()) and idle >= 0.98
    record("C6", ok, f"grid min {min(grid.values()):.3f} max {max(grid.values()):.3f}, zero load {idle:.3f}")
    assert ok, grid


def test_c7_next_block_inclusion():
    cfgs = rivet_cfgs(10.0) + rivet_cfgs(15.0)
    vals = [summary(c, "next_block_inclusion") for c in cfgs]
    n = sum(summary(c, "commitments_counted") for c in cfgs)
    ok = min(vals) > 0.99
    record("C7", ok, f"next-block inclusion min {min(vals):.4f} over {n} commitments")
    assert ok


def test_c8_partitioner_vs_brute_force():
    graphs = [fig_graph()] + random_small_graphs(20)
    equal = worse = 0
    for g in graphs:
        h = g.cut(partition_graph(g, 2, beta=1.5).assign)
        bf = brute_force_min_cut(g, 2, 1.5)[0]
        equal += h == bf
        worse += h > 1.25 * bf
    ok = equal >= 0.8 * len(graphs) and worse == 0
    record("C8", ok, f"{equal}/{len(graphs)} equal to brute force, {worse} more than 25% worse")
    assert ok


SWEEP_TRACES = {
    "locality": dict(LOCALITY),
    "contention": dict(CONTENTION),
    "zipf1": {"accounts": 2000, "records": 12000, "zipf": 1.0, "seed": 5},
    "uniform_multi": {"accounts": 1500, "records": 8000, "zipf": 0.0, "multi": (0, 0.5, 0.3, 0.2), "seed": 4},
}


def test_c9_k_sweep():
    ks = range(1, 11)
    dips, parts, target_ok = {}, [], True
    for name, p in SWEEP_TRACES.items():
        rows = sweep_k(generate_synthetic(SyntheticParams(**p)), ks)
        target_ok &= all(r["target"] == 1 / (r["k"] + 1) for r in rows)
        fr = [(r["k"], r["cross_fraction"]) for r in rows if not math.isnan(r["cross_fraction"])]
        d = [f"k{a}->{b}: {x:.4f}->{y:.4f}" for (a, x), (b, y) in zip(fr, fr[1:]) if y < x]
        if d:
            dips[name] = d
        x = intersection(rows)
        parts.append(f"{name} x={x:.2f}" if x is not None else f"{name} x=none")
    ok = target_ok and not dips
    record("C9", ok, "; ".join(parts) + (f"; decreases {dips}" if dips else "; monotone on all traces"))
    assert target_ok
    assert not dips, dips


def test_c10_determinism():
    batches, mism = run_differential(10_000)
    nondet = sum(1 for o in _OUT.values() for v in o.violations if v.kind == "nondeterminism")
    ok = batches == 10_000 and mism == 0 and nondet == 0
    record("C10", ok, f"{nondet} nondeterminism reports over {len(_OUT)} runs; differential {batches} batches, "
                      f"{mism} mismatches")
    assert ok


def rerun_configs():
    out = []
    for i, (proto, preset, w) in enumerate([
        ("rivet", None, []), ("tpc", None, []), ("rivet", "all", []), ("tpc", "all", []),
        ("rivet", "equivocate", [[10.0, 30.0]]), ("tpc", "tamper", [[10.0, 30.0]]),
        ("rivet", "blame", []), ("tpc", "equivocate", [[5.0, 20.0]]), ("rivet", "tamper", [[20.0, 35.0]]),
        ("rivet", None, [[0.0, 12.0]]),
    ]):
        out.append(ExperimentConfig(protocol=proto, k=2 + i % 2, f=1, seed=100 + i, horizon_blocks=8, warmup=2,
                                    workload=SMALL_WL, faults={"preset": preset} if preset else {},
                                    async_windows=w, trace_messages=i == 0))
    return out


def _tree_diff(a: Path, b: Path) -> list:
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if fa != fb:
        return ["file lists differ"]
    return [str(p) for p in fa if not filecmp.cmp(a / p, b / p, shallow=False)]


def test_c11_byte_identical_reruns(tmp_path):
    diffs = []
    for c in rerun_configs():
        d1 = run_experiment(c, tmp_path / "a", keep_result=False).run_dir
        d2 = run_experiment(c, tmp_path / "b", keep_result=False).run_dir
        diffs += [f"{d1.name}/{p}" for p in _tree_diff(d1, d2)]
    # and across processes with different hash seeds
    runs = []
    for hs in ("1", "2"):
        root = tmp_path / f"proc{hs}"
        env = dict(os.environ, PYTHONHASHSEED=hs)
        subprocess.run([sys.executable, "-m", "rivet.cli", "run", "--k", "2", "--f", "1", "--horizon", "8",
                        "--warmup", "2", "--faults", "all", "--seed", "7", "--runs-dir", str(root)],
                       check=True, env=env, capture_output=True)
        runs.append(next(root.iterdir()))
    diffs += [f"subprocess/{p}" for p in _tree_diff(*runs)]
    ok = not diffs
    record("C11", ok, f"10 configs rerun + 1 cross-process rerun, {len(diffs)} differing files")
    assert ok, diffs
