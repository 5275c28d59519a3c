"""Metrics computed after the fact from chain logs and the event record.

Nothing here looks at replica objects: ``compute`` takes the chain logs,
the list of observation dicts and the injection times, so the numbers can be
recomputed byte-for-byte from a saved run directory.
"""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass, field


@dataclass
class MetricsReport:
    summary: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)  # metric -> [(id, value), ...]

    def __getitem__(self, name):
        return self.summary[name]


def _mean(xs):
    return statistics.fmean(xs) if xs else float("nan")


def _first_times(events, kind, key, shard=None):
    out: dict = {}
    for o in events:
        if o["kind"] != kind or (shard is not None and o.get("shard") != shard):
            continue
        k = key(o)
        if k not in out or o["time"] < out[k]:
            out[k] = o["time"]
    return out


def ref_times(events, chain):
    """(final time, creation time) per finalized reference/coordinator height."""
    final = _first_times(events, "bft_decide", lambda o: o["height"], shard=0)
    want = {b["height"]: b["hash"] for b in chain}
    created: dict = {}
    proposer: dict = {}
    for o in events:
        if o["kind"] == "bft_propose" and o["shard"] == 0 and want.get(o["height"]) == o["hash"]:
            if o["height"] not in created or o["time"] < created[o["height"]]:
                created[o["height"]] = o["time"]
                proposer[o["height"]] = o["replica"]
    return final, created, proposer


def measure_ctx_latency(protocol, chain_logs, events, window):
    """Per finalized ctx in ``window`` heights.

    Rivet: first certification of a worker block containing it minus the
    finalization time of its reference block. Baseline: execution time at
    the last involved shard minus the finalization time of the coordinator
    block that admitted it; the first-shard variant is reported alongside.
    Ctxs with no execution by the horizon go to the censored count.
    """
    main = "reference" if protocol == "rivet" else "coordinator"
    final, _, _ = ref_times(events, chain_logs[main])
    lat, first, censored = [], [], 0
    if protocol == "rivet":
        cert: dict = {}
        for o in events:
            if o["kind"] == "worker_certified":
                for c in o["ctxs"]:
                    if c not in cert or o["time"] < cert[c]:
                        cert[c] = o["time"]
        for b in chain_logs[main]:
            if b["height"] not in window:
                continue
            for ctx in b["ctxs"]:
                t = cert.get(ctx["id"])
                if t is None:
                    censored += 1
                else:
                    lat.append((ctx["id"], t - final[b["height"]]))
        return lat, lat, censored
    done: dict = defaultdict(dict)  # ctx -> shard -> first finalization of a block executing it
    for o in events:
        if o["kind"] == "tpc_worker_final":
            for c in o["execs"]:
                d = done[c]
                if o["shard"] not in d or o["time"] < d[o["shard"]]:
                    d[o["shard"]] = o["time"]
    for b in chain_logs[main]:
        if b["height"] not in window:
            continue
        t0 = final[b["height"]]
        for ctx in b["ctxs"]:
            d = done.get(ctx["id"], {})
            if any(a not in d for a in ctx["shards"]):
                censored += 1
                continue
            lat.append((ctx["id"], max(d.values()) - t0))
            first.append((ctx["id"], min(d.values()) - t0))
    return lat, first, censored


def measure_output_rate(protocol, chain_logs, window):
    main = "reference" if protocol == "rivet" else "coordinator"
    return [(b["height"], len(b["ctxs"])) for b in chain_logs[main] if b["height"] in window]


def measure_commit_fraction(chain_logs, events, t_lo, t_hi):
    """Share of certified worker blocks (certified in [t_lo, t_hi)) that end up finalized."""
    finalized = {b["hash"] for name, log in chain_logs.items() if name.startswith("shard") for b in log}
    certified = {}
    for o in events:
        if o["kind"] == "worker_certified" and t_lo <= o["time"] < t_hi:
            certified.setdefault(o["hash"], o["shard"])
    if not certified:
        return float("nan"), 0, 0
    hit = sum(1 for h in certified if h in finalized)
    return hit / len(certified), hit, len(certified)


def measure_next_block_inclusion(chain_logs, events, created, delta, t_hi):
    """Of the submitted commitments that get finalized, the share finalized no
    later than the first reference block proposed at least Δ after submission."""
    fin_in = {}
    for b in chain_logs["reference"]:
        for c in b["commitments"]:
            for h in c["hash_chain"]:
                fin_in.setdefault(h, b["height"])
    heights = sorted(created)
    ok = total = 0
    for o in events:
        if o["kind"] != "commit_submit" or o["time"] >= t_hi or o["hash"] not in fin_in:
            continue
        nxt = next((h for h in heights if created[h] >= o["time"] + delta), None)
        if nxt is None:
            continue
        total += 1
        ok += fin_in[o["hash"]] <= nxt
    return (ok / total if total else float("nan")), ok, total


def measure_liveness(k, events, created, proposer, window, t_f):
    """Per reference height h in ``window``: did every worker shard get a fresh
    commitment to the proposer of h+1 within (created[h], created[h] + T_f]?"""
    arrivals = defaultdict(list)
    for o in events:
        if o["kind"] == "commit_arrival":
            arrivals[(o["replica"], o["shard"])].append(o["time"])
    rows = []
    for h in sorted(window):
        if h not in created or h + 1 not in proposer:
            continue
        lead = proposer[h + 1]
        t = created[h]
        gaps = []
        for a in range(1, k + 1):
            ts = [x for x in arrivals[(lead, a)] if t < x]
            gaps.append(min(ts) - t if ts else float("inf"))
        rows.append((h, max(gaps)))
    return rows


def compute(protocol: str, k: int, timing, horizon_blocks: int, chain_logs: dict, events: list,
            injections: dict | None = None, warmup: int = 5) -> MetricsReport:
    main = "reference" if protocol == "rivet" else "coordinator"
    chain = chain_logs[main]
    final, created, proposer = ref_times(events, chain)
    window = range(warmup + 1, horizon_blocks + 1)
    rep = MetricsReport()
    s, smp = rep.summary, rep.samples

    lat, first, censored = measure_ctx_latency(protocol, chain_logs, events, window)
    smp["ctx_latency"] = lat
    s["ctx_latency_mean"] = _mean([v for _, v in lat])
    s["ctx_latency_p50"] = statistics.median([v for _, v in lat]) if lat else float("nan")
    s["ctx_latency_first_mean"] = _mean([v for _, v in first])
    s["ctx_censored"] = censored
    s["ctx_measured"] = len(lat)

    rates = measure_output_rate(protocol, chain_logs, window)
    smp["output_rate"] = rates
    s["output_rate_mean"] = _mean([v for _, v in rates])
    s["blocks_measured"] = len(rates)

    included = {c["id"] for b in chain for c in b["ctxs"]}
    injections = injections or {"ctx": {}, "intra": {}}
    s["ctx_injected"] = len(injections["ctx"])
    s["ctx_never_included"] = sum(1 for t in injections["ctx"] if t not in included)
    t_lo = final.get(warmup, 0.0)
    t_hi = final.get(horizon_blocks - 1, float("inf"))
    if protocol == "rivet":
        frac, hit, tot = measure_commit_fraction(chain_logs, events, t_lo, t_hi)
        s["commit_fraction"], s["blocks_certified"], s["blocks_finalized"] = frac, tot, hit
        inc, ok, tot = measure_next_block_inclusion(chain_logs, events, created, timing.delta, t_hi)
        s["next_block_inclusion"], s["commitments_counted"] = inc, tot
        live = measure_liveness(k, events, created, proposer, window, timing.t_f)
        smp["liveness_gap"] = live
        s["liveness_ok_fraction"] = (sum(1 for _, g in live if g <= timing.t_f + 1e-9) / len(live)) if live else float("nan")
        s["liveness_max_gap"] = max((g for _, g in live), default=float("nan"))
        s.update(_conflict_window(chain_logs, final, window))
    else:
        s.update(_lock_hold(chain_logs, final, window))

    dd = [(f"{o['shard']}@{o['ref_height']}:{o['replica']}", o["duration"]) for o in events if o["kind"] == "data_done"
          and o["ref_height"] in window]
    smp["data_download"] = dd
    s["data_download_mean"] = _mean([v for _, v in dd])
    s["data_download_max"] = max((v for _, v in dd), default=float("nan"))

    il = _intra_latency(protocol, chain_logs, events, final, injections["intra"], t_lo, t_hi)
    smp["intra_latency"] = il
    s["intra_latency_mean"] = _mean([v for _, v in il])
    return rep


def _conflict_window(chain_logs, final, window):
    """Rivet's implicit lock: time from a ctx's inclusion until each involved
    shard's next finalized commitment clears it."""
    ref = chain_logs["reference"]
    next_commit: dict = {}
    out = []
    for b in reversed(ref):
        if b["height"] in window:
            for ctx in b["ctxs"]:
                for a in ctx["shards"]:
                    h = next_commit.get(a)
                    if h is not None and h in final:
                        out.append(final[h] - final[b["height"]])
        for c in b["commitments"]:
            next_commit[c["shard"]] = b["height"]
    return {"conflict_window_mean": _mean(out)}


def _lock_hold(chain_logs, final, window):
    """Baseline explicit locks: admission block to the block carrying the shard's ack."""
    admit = {}
    out = []
    for b in chain_logs["coordinator"]:
        for ctx in b["ctxs"]:
            admit[ctx["id"]] = b["height"]
        for m in b["acks"]:
            for cid in m["ctx_ids"]:
                h0 = admit.get(cid)
                if h0 in window and b["height"] in final:
                    out.append(final[b["height"]] - final[h0])
    return {"lock_hold_mean": _mean(out)}


def _intra_latency(protocol, chain_logs, events, final, injections, t_lo, t_hi):
    out = []
    if protocol == "rivet":
        for name, log in sorted(chain_logs.items()):
            if not name.startswith("shard"):
                continue
            for b in log:
                t = final.get(b["finalized_in"])
                for tid in b["intra"]:
                    t0 = injections.get(tid)
                    if t is not None and t0 is not None and t_lo <= t0 < t_hi:
                        out.append((tid, t - t0))
    else:
        seen = set()
        for o in events:
            if o["kind"] != "tpc_worker_final":
                continue
            for tid in o["intra"]:
                t0 = injections.get(tid)
                if tid in seen or t0 is None or not t_lo <= t0 < t_hi:
                    continue
                seen.add(tid)
                out.append((tid, o["time"] - t0))
    return out


__all__ = ["MetricsReport", "compute", "measure_ctx_latency", "measure_output_rate", "measure_commit_fraction",
           "measure_next_block_inclusion", "measure_liveness", "ref_times"]
