"""Cross-shard data exchange and batch execution.

For every finalized reference block a worker shard downloads, in one request
per target shard, the foreign keys read by the block's relevant ctxs. Values
come with inclusion proofs against the target's latest finalized state digest
at or before that height, so a lying responder is caught by the requester.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

from .codec import record
from .core import Hash, Key, PartitionMap
from .state import ExecutionOutcome, InclusionProof, ShardState, apply, prove, verify_proof

VALUE_BYTES = 32


@record("DataRequest")
@dataclass(frozen=True)
class DataRequest:
    requester: int
    target: int
    ref_height: int
    keys: frozenset
    digest: Hash | None = None  # pinned digest (2PC); None means "latest finalized at ref_height"


@record("DataResponse")
@dataclass(frozen=True)
class DataResponse:
    target: int
    ref_height: int
    against_digest: Hash
    proofs: tuple


def foreign_reads_by_target(ctxs, shard: int, partition: PartitionMap) -> dict:
    """target shard -> set of keys read by ``ctxs`` and homed there (excluding ``shard``)."""
    out: dict = defaultdict(set)
    for ctx in ctxs:
        for key in ctx.reads:
            home = partition.home(key)
            if home != shard:
                out[home].add(key)
    return out


def plan_requests(ref_block, shard: int, partition: PartitionMap) -> list[DataRequest]:
    """One batched request per foreign target for the relevant ctxs of ``ref_block``."""
    ctxs = [c for c in ref_block.cross_txs if shard in c.shards]
    by_target = foreign_reads_by_target(ctxs, shard, partition)
    return [DataRequest(shard, b, ref_block.height, frozenset(by_target[b])) for b in sorted(by_target)]


_PROOFS: dict = {}


def cached_prove(state: ShardState, key: Key) -> InclusionProof:
    memo = (state.digest, key)
    p = _PROOFS.get(memo)
    if p is None:
        if len(_PROOFS) > 500_000:
            _PROOFS.clear()
        p = _PROOFS[memo] = prove(state, key)
    return p


def answer_request(states: dict, digest: Hash, req: DataRequest, tamper: bool = False) -> DataResponse | None:
    """Build the response from the stored state with ``digest`` (None if not held yet)."""
    state = states.get(digest)
    if state is None:
        return None
    proofs = tuple(cached_prove(state, k) for k in sorted(req.keys))
    if tamper:
        proofs = tuple(replace(p, value=p.value + 1) for p in proofs)
    return DataResponse(req.target, req.ref_height, digest, proofs)


def checked_proof(proof: InclusionProof, digest: Hash) -> bool:
    memo = proof.__dict__.get("_verified")
    if memo is not None and memo[0] == digest:
        return memo[1]
    ok = verify_proof(proof, digest)
    proof.__dict__["_verified"] = (digest, ok)
    return ok


def check_response(resp: DataResponse, keys, expected_digest: Hash) -> dict | None:
    """Verified key -> value map covering ``keys``, or None if anything is off."""
    if resp.against_digest != expected_digest:
        return None
    values = {}
    for p in resp.proofs:
        if p.key in keys:
            if not checked_proof(p, expected_digest):
                return None
            values[p.key] = p.value
    if len(values) != len(keys):
        return None
    return values


def assemble_and_execute(state: ShardState, ctxs, foreign: dict, shard: int,
                         partition: PartitionMap) -> ExecutionOutcome:
    """Run one ref block's relevant ctxs in chain order on top of ``state``.

    ``foreign`` must hold a verified value for every foreign read key; values
    act as a snapshot for the whole batch while local writes are sequential.
    """
    relevant = [c for c in ctxs if shard in c.shards]
    return apply(state, relevant, foreign, shard, partition)


def requested_bytes(reqs) -> int:
    return sum(len(r.keys) for r in reqs) * VALUE_BYTES


class DataTracker:
    """Per-replica bookkeeping of outstanding downloads keyed by batch id."""

    def __init__(self):
        self.needed: dict = {}  # batch -> {target: (keys, digest)}
        self.values: dict = {}  # batch -> {key: value}
        self.done: dict = {}  # batch -> set of resolved targets
        self.started: dict = {}  # batch -> time first requested
        self.finished: dict = {}  # batch -> completion time

    def expect(self, batch, target: int, keys, digest: Hash, now: float):
        self.needed.setdefault(batch, {})[target] = (frozenset(keys), digest)
        self.values.setdefault(batch, {})
        self.done.setdefault(batch, set())
        self.started.setdefault(batch, now)

    def outstanding(self, batch) -> list:
        need = self.needed.get(batch, {})
        done = self.done.get(batch, set())
        return [t for t in sorted(need) if t not in done]

    def complete(self, batch) -> bool:
        return batch not in self.needed or not self.outstanding(batch)

    def offer(self, batch, target: int, resp: DataResponse, now: float) -> bool:
        need = self.needed.get(batch, {}).get(target)
        if need is None or target in self.done[batch]:
            return False
        keys, digest = need
        vals = check_response(resp, keys, digest)
        if vals is None:
            return False
        self.values[batch].update(vals)
        self.done[batch].add(target)
        if self.complete(batch):
            self.finished[batch] = now
        return True

    def forget(self, batch):
        for d in (self.needed, self.values, self.done, self.started):
            d.pop(batch, None)
