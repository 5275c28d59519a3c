import copy
import math

import pytest

from rivet.core import PartitionMap
from rivet.metrics import (
    compute, measure_commit_fraction, measure_ctx_latency, measure_liveness, measure_next_block_inclusion,
    measure_output_rate, ref_times,
)
from rivet.netsim import TimingConfig
from rivet.scanner import check_read_write_exclusion, check_tpc, check_views, scan

from conftest import small_run

PM = PartitionMap({"a": 1, "b": 2, "c": 2}, 2)


def _kinds(vs):
    return {v.kind for v in vs}


def _scan_args(out):
    res = out.result
    execs = [o for o in res.observations if o["kind"] == "ctx_exec"]
    pm = next(iter(res.nodes.values())).ctx.partition
    return res.config.protocol, copy.deepcopy(res.chain_logs), pm, copy.deepcopy(res.views), copy.deepcopy(execs), res.honest


# ---------------------------------------------------------------------------
# scanner: clean runs stay clean, mutated runs are caught


def test_clean_runs_scan_clean():
    for proto in ("rivet", "tpc"):
        assert scan(*_scan_args(small_run(proto))) == []


def test_fork_in_views_detected():
    proto, logs, pm, views, execs, honest = _scan_args(small_run())
    rid = sorted(views["shard1"])[1]
    views["shard1"][rid][2][1] = "ff" * 32
    assert "fork" in _kinds(scan(proto, logs, pm, views, execs, honest))


def test_gap_in_views_detected():
    proto, logs, pm, views, execs, honest = _scan_args(small_run())
    rid = sorted(views["shard0"])[0]
    del views["shard0"][rid][1]
    assert "gap" in _kinds(scan(proto, logs, pm, views, execs, honest))


def test_broken_reference_linkage_detected():
    proto, logs, pm, views, execs, honest = _scan_args(small_run())
    logs["reference"][3]["parent"] = "00" * 32
    assert "fork" in _kinds(scan(proto, logs, pm, views, execs, honest))


def test_double_final_detected():
    proto, logs, pm, views, execs, honest = _scan_args(small_run())
    ref = logs["reference"]
    first = next(c for b in ref for c in b["commitments"] if c["shard"] == 1)
    replay = copy.deepcopy(first)
    replay["hash_chain"] = ["ee" * 32 for _ in replay["hash_chain"]]
    ref[-1]["commitments"].append(replay)
    assert "double_final" in _kinds(scan(proto, logs, pm, views, execs, honest))


def test_nondeterminism_detected():
    proto, logs, pm, views, execs, honest = _scan_args(small_run())
    target = next(o for o in execs if o["results"] and o["replica"] in honest)
    tid = sorted(target["results"])[0]
    twin = next(o for o in execs if o is not target and tid in o["results"] and o["replica"] in honest)
    twin["results"][tid] = "0" * 16
    assert "nondeterminism" in _kinds(scan(proto, logs, pm, views, execs, honest))


def _ctx(i, reads, writes):
    shards = sorted({PM.shard_of(a) for a, _ in reads + writes})
    return {"id": f"{i:064x}", "reads": [list(k) for k in reads], "writes": [list(k) for k in writes], "shards": shards}


def _rb(h, coms=(), ctxs=()):
    return {"height": h, "hash": f"h{h}", "parent": f"h{h - 1}", "commitments": list(coms), "ctxs": list(ctxs)}


def test_read_of_pending_write_detected_by_hand():
    w = _ctx(1, [("a", 0), ("b", 0)], [("b", 0)])
    r = _ctx(2, [("a", 1), ("b", 0)], [("a", 1)])
    assert check_read_write_exclusion([_rb(1, ctxs=[w]), _rb(2, ctxs=[r])], PM)
    # a commitment from shard 2 in between clears the pending write
    com = {"shard": 2, "hash_chain": [], "parents": [], "heights": []}
    assert check_read_write_exclusion([_rb(1, ctxs=[w]), _rb(2, coms=[com], ctxs=[r])], PM) == []
    # the same conflict inside one block is also a violation
    assert check_read_write_exclusion([_rb(1, ctxs=[w, r])], PM)
    # reads of the writer's own pending key by a later ctx at another shard's key are fine
    other = _ctx(3, [("a", 0), ("c", 0)], [("c", 0)])
    assert check_read_write_exclusion([_rb(1, ctxs=[w]), _rb(2, ctxs=[other])], PM) == []


def _cb(h, ctxs=(), commits=(), acks=()):
    return {"height": h, "hash": f"c{h}", "parent": f"c{h - 1}", "ctxs": list(ctxs), "commits": list(commits),
            "acks": list(acks)}


def _msg(shard, *ids):
    return {"shard": shard, "ctx_ids": list(ids)}


def _wb(shard, h, coord, commits=(), execs=()):
    return {"shard": shard, "height": h, "hash": f"w{shard}{h}", "parent": f"w{shard}{h - 1}", "coord_height": coord,
            "commits": list(commits), "execs": list(execs)}


def test_tpc_lock_conflict_and_atomicity_by_hand():
    t1 = _ctx(1, [("a", 0), ("b", 0)], [("a", 0)])
    t2 = _ctx(2, [("b", 0), ("a", 1)], [])
    i1 = t1["id"]
    ok = {
        "coordinator": [_cb(1, [t1]), _cb(2, commits=[_msg(1, i1), _msg(2, i1)]), _cb(3, acks=[_msg(1, i1), _msg(2, i1)]),
                        _cb(4, [t2])],
        "shard1": [_wb(1, 1, 1, commits=[i1]), _wb(1, 2, 2, execs=[i1])],
        "shard2": [_wb(2, 1, 1, commits=[i1]), _wb(2, 2, 2, execs=[i1])],
    }
    assert check_tpc(ok, PM) == []
    # t2 admitted while b0 still locked by t1
    bad = copy.deepcopy(ok)
    bad["coordinator"][1]["ctxs"].append(t2)
    assert "lock_conflict" in _kinds(check_tpc(bad, PM))
    # ack before every shard committed
    bad = copy.deepcopy(ok)
    bad["coordinator"][1]["commits"] = [_msg(1, i1)]
    bad["coordinator"][2]["commits"] = [_msg(2, i1)]
    assert "atomicity" in _kinds(check_tpc(bad, PM))
    # worker executes before the coordinator saw all commits
    bad = copy.deepcopy(ok)
    bad["shard1"][1]["coord_height"] = 1
    assert "atomicity" in _kinds(check_tpc(bad, PM))
    # execute without a local commit
    bad = copy.deepcopy(ok)
    bad["shard2"][0]["commits"] = []
    assert "atomicity" in _kinds(check_tpc(bad, PM))


def test_views_prefix_rule_by_hand():
    v = {"shard1": {"1.0": [[1, "x"], [2, "y"]], "1.1": [[1, "x"]]}}
    assert check_views(v) == []
    v["shard1"]["1.1"] = [[1, "z"]]
    assert _kinds(check_views(v)) == {"fork"}


# ---------------------------------------------------------------------------
# metrics: hand-built logs with known answers


def _events():
    ev = []
    for h in range(1, 5):
        ev.append({"kind": "bft_propose", "shard": 0, "height": h, "hash": f"h{h}", "replica": f"0.{h % 4}", "time": 10.0 * h})
        ev.append({"kind": "bft_decide", "shard": 0, "height": h, "hash": f"h{h}", "replica": "0.0", "time": 10.0 * h + 1})
        ev.append({"kind": "bft_decide", "shard": 0, "height": h, "hash": f"h{h}", "replica": "0.1", "time": 10.0 * h + 1.5})
    return ev


def test_ref_times_takes_first():
    chain = [_rb(h) for h in range(1, 5)]
    final, created, proposer = ref_times(_events(), chain)
    assert final[2] == 21.0 and created[3] == 30.0 and proposer[4] == "0.0"


def test_rivet_latency_and_censoring():
    c1, c2, c3 = _ctx(1, [("a", 0), ("b", 0)], []), _ctx(2, [("a", 1), ("c", 0)], []), _ctx(3, [("a", 2), ("b", 2)], [])
    logs = {"reference": [_rb(1), _rb(2, ctxs=[c1, c2]), _rb(3, ctxs=[c3]), _rb(4)]}
    ev = _events() + [
        {"kind": "worker_certified", "shard": 1, "hash": "x", "time": 24.0, "ctxs": [c1["id"]]},
        {"kind": "worker_certified", "shard": 2, "hash": "y", "time": 23.5, "ctxs": [c1["id"], c2["id"]]},
        {"kind": "worker_certified", "shard": 1, "hash": "z", "time": 29.0, "ctxs": [c2["id"]]},
    ]
    lat, first, cens = measure_ctx_latency("rivet", logs, ev, range(2, 4))
    assert dict(lat) == {c1["id"]: 2.5, c2["id"]: 2.5}
    assert cens == 1  # c3 never certified
    assert measure_output_rate("rivet", logs, range(2, 5)) == [(2, 2), (3, 1), (4, 0)]


def test_tpc_latency_last_and_first_shard():
    c1 = _ctx(1, [("a", 0), ("b", 0)], [])
    logs = {"coordinator": [_rb(1), _rb(2, ctxs=[c1])]}
    ev = _events() + [
        {"kind": "tpc_worker_final", "shard": 1, "time": 40.0, "execs": [c1["id"]], "intra": []},
        {"kind": "tpc_worker_final", "shard": 2, "time": 45.0, "execs": [c1["id"]], "intra": []},
        {"kind": "tpc_worker_final", "shard": 2, "time": 44.0, "execs": [c1["id"]], "intra": []},
    ]
    lat, first, cens = measure_ctx_latency("tpc", logs, ev, range(1, 3))
    assert lat == [(c1["id"], 23.0)] and first == [(c1["id"], 19.0)] and cens == 0
    lat, _, cens = measure_ctx_latency("tpc", logs, ev[:-2], range(1, 3))
    assert lat == [] and cens == 1


def test_commit_fraction_window():
    logs = {"reference": [], "shard1": [{"hash": "p"}, {"hash": "q"}], "shard2": [{"hash": "r"}]}
    ev = [{"kind": "worker_certified", "shard": 1, "hash": h, "time": t, "ctxs": []}
          for h, t in [("p", 5), ("q", 6), ("dead", 7), ("r", 8), ("late", 50), ("early", 1)]]
    frac, hit, tot = measure_commit_fraction(logs, ev, 2.0, 40.0)
    assert (hit, tot) == (3, 4) and frac == 0.75
    assert math.isnan(measure_commit_fraction(logs, [], 0, 1)[0])


def test_next_block_inclusion_rule():
    com = lambda *hs: {"shard": 1, "hash_chain": list(hs), "parents": [], "heights": []}
    logs = {"reference": [_rb(1), _rb(2, coms=[com("x")]), _rb(3, coms=[com("y")]), _rb(4)]}
    created = {1: 10.0, 2: 20.0, 3: 30.0, 4: 40.0}
    ev = [
        {"kind": "commit_submit", "hash": "x", "time": 18.5},  # next block >= 19.5 is h3; finalized in h2: ok
        {"kind": "commit_submit", "hash": "y", "time": 12.0},  # next is h2, finalized in h3: late
        {"kind": "commit_submit", "hash": "never", "time": 12.0},  # not finalized: not counted
    ]
    inc, ok, tot = measure_next_block_inclusion(logs, ev, created, 1.0, 100.0)
    assert (ok, tot) == (1, 2) and inc == 0.5


def test_liveness_gap():
    created = {1: 10.0, 2: 20.0}
    proposer = {1: "0.1", 2: "0.2", 3: "0.3"}
    ev = [
        {"kind": "commit_arrival", "replica": "0.2", "shard": 1, "time": 12.0},
        {"kind": "commit_arrival", "replica": "0.2", "shard": 2, "time": 16.0},
        {"kind": "commit_arrival", "replica": "0.1", "shard": 2, "time": 11.0},  # wrong replica
        {"kind": "commit_arrival", "replica": "0.3", "shard": 1, "time": 19.0},  # before created[2]
    ]
    rows = measure_liveness(2, ev, created, proposer, range(1, 3), 7.0)
    assert rows[0] == (1, 6.0)
    assert rows[1] == (2, float("inf"))


def test_compute_on_run_has_every_key():
    out = small_run()
    s = out.metrics.summary
    for key in ("ctx_latency_mean", "output_rate_mean", "commit_fraction", "next_block_inclusion",
                "liveness_ok_fraction", "conflict_window_mean", "intra_latency_mean", "data_download_mean"):
        assert key in s and not math.isnan(s[key]), key
    t = out.metrics
    assert s["ctx_measured"] + s["ctx_censored"] == sum(n for _, n in t.samples["output_rate"])
    res = out.result
    again = compute("rivet", 2, res.config.timing, res.horizon_blocks, res.chain_logs, res.observations,
                    res.injections, warmup=2)
    assert again.summary.keys() == s.keys()
    assert all((again.summary[k] == s[k]) or (math.isnan(s[k]) and math.isnan(again.summary[k])) for k in s)
