"""Post-hoc safety scanner over chain logs.

Works only on the JSON-able artifacts a run leaves behind (chain logs,
per-replica finalized views, ctx_exec records), so it can be pointed at a
saved run directory as well as at an in-memory result. Every check
re-derives its rule from scratch rather than calling protocol code.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


def _home(partition, key) -> int:
    return partition.shard_of(key[0])


def check_views(views: dict) -> list:
    """Honest replicas of a shard must hold prefixes of one chain, and no
    height may be finalized twice with different hashes."""
    out = []
    for shard in sorted(views):
        seqs = views[shard]
        by_height: dict = {}
        for rid in sorted(seqs):
            last = None
            for height, h in seqs[rid]:
                if last is not None and height != last + 1:
                    out.append(Violation("gap", f"{shard} {rid}: height {last} then {height}"))
                last = height
                prev = by_height.setdefault(height, h)
                if prev != h:
                    out.append(Violation("fork", f"{shard} height {height}: {prev[:12]} vs {h[:12]} ({rid})"))
    return out


def check_linkage(blocks: list, name: str) -> list:
    out = []
    for a, b in zip(blocks, blocks[1:]):
        if b["parent"] != a["hash"] or b["height"] != a["height"] + 1:
            out.append(Violation("fork", f"{name}: block {b['height']} does not extend {a['height']}"))
    return out


def check_rivet_commitments(reference: list) -> list:
    """Commitments of each shard must chain onto one another with
    consecutive heights: one finalized worker block per (shard, height)."""
    out = []
    tip: dict = {}
    seen: dict = {}
    for rb in reference:
        for c in rb["commitments"]:
            a = c["shard"]
            prev_hash, prev_h = tip.get(a, (None, 0))
            for h, parent, height in zip(c["hash_chain"], c["parents"], c["heights"]):
                if prev_hash is not None and parent != prev_hash:
                    out.append(Violation("fork", f"shard{a} height {height} at ref {rb['height']}: wrong parent"))
                if height != prev_h + 1:
                    out.append(Violation("gap", f"shard{a} height {height} follows {prev_h}"))
                if seen.setdefault((a, height), h) != h:
                    out.append(Violation("double_final", f"shard{a} height {height}"))
                prev_hash, prev_h = h, height
            tip[a] = (prev_hash, prev_h)
    return out


def check_read_write_exclusion(reference: list, partition) -> list:
    """No finalized ctx reads a key with a pending write at its home shard.

    Pending writes of shard a accumulate from ctxs involving a and are
    dropped whenever a commitment from a is finalized; commitments in a
    block take effect before that block's ctxs, and earlier ctxs of the same
    block count as pending.
    """
    out = []
    pending: dict = defaultdict(set)
    for rb in reference:
        for c in rb["commitments"]:
            pending[c["shard"]] = set()
        block_writes: dict = defaultdict(set)
        for ctx in rb["ctxs"]:
            for key in ctx["reads"]:
                k = tuple(key)
                a = _home(partition, k)
                if k in pending[a] or k in block_writes[a]:
                    out.append(Violation("read_write_conflict",
                                         f"ref {rb['height']} ctx {ctx['id'][:12]} reads pending {k}"))
            for key in ctx["writes"]:
                k = tuple(key)
                block_writes[_home(partition, k)].add(k)
        for a, ks in block_writes.items():
            pending[a] |= ks
    return out


def check_tpc(logs: dict, partition) -> list:
    """Lock exclusivity and commit-before-execute atomicity for the baseline."""
    out = []
    coord = logs.get("coordinator", [])
    held: dict = {}  # key -> ctx id
    keys_of: dict = {}
    shards_of: dict = {}
    committed: dict = defaultdict(set)
    ready_at: dict = {}
    acked: dict = defaultdict(set)
    for cb in coord:
        h = cb["height"]
        for ctx in cb["ctxs"]:
            cid = ctx["id"]
            ks = {tuple(k) for k in ctx["reads"]} | {tuple(k) for k in ctx["writes"]}
            for k in sorted(ks):
                if k in held:
                    out.append(Violation("lock_conflict", f"coord {h}: {cid[:12]} takes {k} held by {held[k][:12]}"))
            for k in ks:
                held[k] = cid
            keys_of[cid] = ks
            shards_of[cid] = set(ctx["shards"])
        for m in cb["commits"]:
            for cid in m["ctx_ids"]:
                if cid not in shards_of:
                    out.append(Violation("unknown_ctx", f"coord {h}: commit for {cid[:12]}"))
                    continue
                committed[cid].add(m["shard"])
                if committed[cid] == shards_of[cid]:
                    ready_at.setdefault(cid, h)
        for m in cb["acks"]:
            for cid in m["ctx_ids"]:
                if cid not in shards_of:
                    out.append(Violation("unknown_ctx", f"coord {h}: ack for {cid[:12]}"))
                    continue
                r = ready_at.get(cid)
                if r is None or r >= h:
                    out.append(Violation("atomicity", f"coord {h}: shard {m['shard']} acked {cid[:12]} before all commits"))
                acked[cid].add(m["shard"])
                for k in keys_of[cid]:
                    if _home(partition, k) == m["shard"] and held.get(k) == cid:
                        del held[k]
    for name in sorted(logs):
        if not name.startswith("shard"):
            continue
        a = int(name[5:])
        done_commit: set = set()
        done_exec: set = set()
        for wb in logs[name]:
            for cid in wb["commits"]:
                if cid in done_commit or a not in shards_of.get(cid, ()):
                    out.append(Violation("atomicity", f"{name} {wb['height']}: bad commit of {cid[:12]}"))
                done_commit.add(cid)
            for cid in wb["execs"]:
                r = ready_at.get(cid)
                if cid in done_exec or cid not in done_commit or r is None or wb["coord_height"] < r:
                    out.append(Violation("atomicity", f"{name} {wb['height']}: early or repeated exec of {cid[:12]}"))
                done_exec.add(cid)
    return out


def check_determinism(exec_records, honest=None) -> list:
    """Every honest report of a transaction's (verdict, writes) must agree."""
    out = []
    honest = set(honest) if honest is not None else None
    seen: dict = {}
    for o in exec_records:
        if honest is not None and o["replica"] not in honest:
            continue
        for tid in sorted(o["results"]):
            d = o["results"][tid]
            first = seen.setdefault(tid, (d, o["replica"]))
            if first[0] != d:
                out.append(Violation("nondeterminism", f"{tid[:12]}: {first[1]} vs {o['replica']}"))
    return out


def scan(protocol: str, chain_logs: dict, partition, views: dict | None = None,
         exec_records=(), honest=None) -> list:
    out = check_views(views or {})
    for name in sorted(chain_logs):
        out += check_linkage(chain_logs[name], name)
    if protocol == "rivet":
        out += check_rivet_commitments(chain_logs["reference"])
        out += check_read_write_exclusion(chain_logs["reference"], partition)
    else:
        out += check_tpc(chain_logs, partition)
    out += check_determinism(exec_records, honest)
    return out


def scan_result(res) -> list:
    execs = [o for o in res.observations if o["kind"] == "ctx_exec"]
    return scan(res.config.protocol, res.chain_logs, _partition_of(res), res.views, execs, res.honest)


def _partition_of(res):
    for n in res.nodes.values():
        return n.ctx.partition
    raise ValueError("run has no nodes")


__all__ = ["Violation", "scan", "scan_result", "check_views", "check_linkage", "check_rivet_commitments",
           "check_read_write_exclusion", "check_tpc", "check_determinism"]
