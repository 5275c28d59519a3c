"""Reference shard: chain state, implicit lock table, commitment and
cross-shard admission rules, and the consensus replica."""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

from .bft import SimBFT, commit_digest
from .codec import record
from .core import (
    GLOBAL, REFERENCE_SHARD, ZERO_HASH, CrossShardTx, Hash, PartitionMap, hash_of,
    involved_shards, validate_certificate,
)
from .node import Node

BAD_CERTIFICATE, BROKEN_CHAIN, STALE_COMMITMENT = "bad_certificate", "broken_chain", "stale_commitment"


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str | None = None

    def __bool__(self):
        return self.ok


ACCEPT = Verdict(True)


@record("ReferenceBlock")
@dataclass(frozen=True)
class ReferenceBlock:
    parent_hash: Hash
    height: int
    commitments: tuple
    cross_txs: tuple

    @cached_property
    def hash(self) -> Hash:
        return hash_of(self)


GENESIS_REF = ReferenceBlock(ZERO_HASH, 0, (), ())


@dataclass
class CommitInfo:
    height: int  # worker height
    hash: Hash  # worker block hash
    digest: Hash  # worker state digest
    ref_height: int  # ref height the commitment reports
    included_at: int  # ref height of the block that finalized it


class LockTable:
    """Pending write keys per worker shard since its latest commitment."""

    def __init__(self, k: int):
        self.k = k
        self.s = {a: 0 for a in range(1, k + 1)}
        self.W: dict[int, set] = {a: set() for a in range(1, k + 1)}
        self.pending: dict[int, list] = {a: [] for a in range(1, k + 1)}

    def clear(self, shard: int, height: int):
        self.s[shard] = height
        self.W[shard] = set()
        self.pending[shard] = []

    def add(self, ctx: CrossShardTx, partition: PartitionMap):
        for key in ctx.writes:
            self.W[partition.home(key)].add(key)
        for a in sorted(ctx.shards):
            self.pending[a].append(ctx.id)

    def conflicts(self, ctx: CrossShardTx, partition: PartitionMap, extra: dict | None = None,
                  cleared: frozenset = frozenset()) -> bool:
        """True iff some read of ``ctx`` hits a pending write at its home shard."""
        for key in ctx.reads:
            a = partition.home(key)
            if a not in cleared and key in self.W[a]:
                return True
            if extra and key in extra.get(a, ()):
                return True
        return False

    def snapshot(self) -> dict:
        return {
            "s": dict(self.s),
            "W": {a: sorted(map(str, w)) for a, w in self.W.items()},
            "pending": {a: [h.hex() for h in p] for a, p in self.pending.items()},
        }


class RefChainState:
    """Deterministic replay of the finalized reference chain.

    Kept by reference replicas (for validation) and by every worker replica
    (for mandated ctx lists and foreign digests).
    """

    def __init__(self, k: int, partition: PartitionMap, genesis_blocks: dict):
        self.k = k
        self.partition = partition
        self.height = 0
        self.tip = GENESIS_REF.hash
        self.blocks: list[ReferenceBlock] = [GENESIS_REF]
        self.last_commit: dict[int, CommitInfo] = {}
        self.commit_history: dict[int, list] = {}
        for a in range(1, k + 1):
            g = genesis_blocks[a]
            self.last_commit[a] = CommitInfo(0, g.hash, g.header.state_digest, 0, 0)
            self.commit_history[a] = [(0, g.header.state_digest)]
        self.last_ctx = {a: 0 for a in range(1, k + 1)}
        self.locks = LockTable(k)
        self.relevant: dict[int, list] = {a: [] for a in range(1, k + 1)}
        self._relevant_h: dict[int, list] = {a: [] for a in range(1, k + 1)}
        self.ctx_ids: set = set()
        self.ctx_height: dict[Hash, int] = {}

    def apply(self, block: ReferenceBlock):
        assert block.height == self.height + 1 and block.parent_hash == self.tip, "out-of-order reference block"
        r = block.height
        for com in block.commitments:
            last = com.headers[-1]
            self.last_commit[com.shard] = CommitInfo(last.height, com.hash_chain[-1], com.state_digest, com.ref_height, r)
            self.commit_history[com.shard].append((r, com.state_digest))
            self.locks.clear(com.shard, r)
        for ctx in block.cross_txs:
            self.locks.add(ctx, self.partition)
            self.ctx_ids.add(ctx.id)
            self.ctx_height[ctx.id] = r
            for a in sorted(ctx.shards):
                self.last_ctx[a] = r
                self.relevant[a].append((r, ctx))
                self._relevant_h[a].append(r)
        self.blocks.append(block)
        self.height = r
        self.tip = block.hash

    def relevant_ctxs(self, shard: int, lo: int, hi: int) -> list:
        """Ctxs involving ``shard`` finalized at ref heights lo..hi inclusive, in chain order."""
        hs = self._relevant_h[shard]
        i = bisect.bisect_left(hs, lo)
        j = bisect.bisect_right(hs, hi)
        return [c for _, c in self.relevant[shard][i:j]]

    def relevant_batches(self, shard: int, lo: int, hi: int) -> list:
        """[(height, [ctx, ...]), ...] for the same range, grouped per ref block."""
        hs = self._relevant_h[shard]
        i = bisect.bisect_left(hs, lo)
        j = bisect.bisect_right(hs, hi)
        out: list = []
        for h, c in self.relevant[shard][i:j]:
            if out and out[-1][0] == h:
                out[-1][1].append(c)
            else:
                out.append((h, [c]))
        return out

    def digest_at(self, shard: int, r: int) -> Hash:
        """State digest of ``shard``'s latest commitment finalized at ref height <= r."""
        hist = self.commit_history[shard]
        i = bisect.bisect_right(hist, r, key=lambda e: e[0]) - 1
        return hist[i][1]


# ---------------------------------------------------------------------------
# validity rules


def validate_commitment(chain: RefChainState, com, keyring, f: int) -> Verdict:
    """Accept iff certificates, parent linkage and staleness all check out."""
    a = com.shard
    if not 1 <= a <= chain.k:
        return Verdict(False, BROKEN_CHAIN)
    n = len(com.hash_chain)
    if n == 0 or len(com.certificates) != n or len(com.headers) != n:
        return Verdict(False, BROKEN_CHAIN)
    for h, cert in zip(com.hash_chain, com.certificates):
        if cert.block_hash != h or not validate_certificate(cert, keyring, a, f + 1):
            return Verdict(False, BAD_CERTIFICATE)
    last = chain.last_commit[a]
    parent, height, ref_h = last.hash, last.height, last.ref_height
    for h, hdr in zip(com.hash_chain, com.headers):
        if (hdr.hash != h or hdr.shard != a or hdr.parent_hash != parent or hdr.height != height + 1
                or hdr.ref_height < ref_h):
            return Verdict(False, BROKEN_CHAIN)
        parent, height, ref_h = h, hdr.height, hdr.ref_height
    tail = com.headers[-1]
    if com.state_digest != tail.state_digest or com.ref_height != tail.ref_height or com.ref_height > chain.height:
        return Verdict(False, BROKEN_CHAIN)
    if com.ref_height < chain.last_ctx[a]:
        return Verdict(False, STALE_COMMITMENT)
    return ACCEPT


def ctx_well_formed(ctx, partition: PartitionMap) -> bool:
    try:
        shards = involved_shards(ctx, partition)
    except ValueError:
        return False
    return (len(shards) >= 2 and shards == ctx.shards and ctx.program.contract_tag == GLOBAL)


def validate_ctx(locks: LockTable, proposal_writes: dict, ctx: CrossShardTx, partition: PartitionMap,
                 cleared: frozenset = frozenset()) -> bool:
    """Read-vs-pending-write check against W plus earlier ctxs of the proposal.

    ``cleared`` lists shards whose commitment sits earlier in the same
    proposal; their W is treated as empty. On accept ``proposal_writes`` is
    extended with the ctx's writes.
    """
    if locks.conflicts(ctx, partition, proposal_writes, cleared):
        return False
    for key in ctx.writes:
        proposal_writes.setdefault(partition.home(key), set()).add(key)
    return True


def build_proposal(pool, chain: RefChainState, commitments, keyring, f: int, partition: PartitionMap,
                   max_ctx: int | None = None):
    """Pick the newest valid commitment per shard, then admissible ctxs in pool order.

    ``pool`` is an iterable of ctxs in arrival order; ``commitments`` an
    iterable of candidate BlockCommitments. Returns (commitments, ctxs).
    """
    best: dict = {}
    for com in commitments:
        cur = best.get(com.shard)
        if cur is not None and (cur.headers[-1].height, cur.hash_chain[-1]) >= (com.headers[-1].height, com.hash_chain[-1]):
            continue
        if validate_commitment(chain, com, keyring, f):
            best[com.shard] = com
    coms = tuple(best[a] for a in sorted(best))
    cleared = frozenset(best)
    writes: dict = {}
    chosen = []
    seen = set()
    for ctx in pool:
        if max_ctx is not None and len(chosen) >= max_ctx:
            break
        if ctx.id in chain.ctx_ids or ctx.id in seen or not ctx_well_formed(ctx, partition):
            continue
        if validate_ctx(chain.locks, writes, ctx, partition, cleared):
            chosen.append(ctx)
            seen.add(ctx.id)
    return coms, tuple(chosen)


def validate_block(chain: RefChainState, block: ReferenceBlock, keyring, f: int, partition: PartitionMap,
                   max_ctx: int | None = None) -> Verdict:
    if block.height != chain.height + 1 or block.parent_hash != chain.tip:
        return Verdict(False, "bad_parent")
    shards = [c.shard for c in block.commitments]
    if len(set(shards)) != len(shards):
        return Verdict(False, "duplicate_commitment")
    for com in block.commitments:
        v = validate_commitment(chain, com, keyring, f)
        if not v:
            return v
    if max_ctx is not None and len(block.cross_txs) > max_ctx:
        return Verdict(False, "over_capacity")
    cleared = frozenset(shards)
    writes: dict = {}
    seen = set()
    for ctx in block.cross_txs:
        if ctx.id in chain.ctx_ids or ctx.id in seen or not ctx_well_formed(ctx, partition):
            return Verdict(False, "bad_ctx")
        if not validate_ctx(chain.locks, writes, ctx, partition, cleared):
            return Verdict(False, "lock_conflict")
        seen.add(ctx.id)
    return ACCEPT


# ---------------------------------------------------------------------------
# wire messages


@record("CommitmentSubmit")
@dataclass(frozen=True)
class CommitmentSubmit:
    commitment: object


@record("RefBlockMsg")
@dataclass(frozen=True)
class RefBlockMsg:
    block: ReferenceBlock
    cert: object


def check_finality(block, cert, keyring, f: int, shard: int = REFERENCE_SHARD) -> bool:
    return (cert.block_hash == block.hash
            and validate_certificate(cert, keyring, shard, 2 * f + 1, commit_digest(block.hash)))


# ---------------------------------------------------------------------------
# replica


class RefReplica(Node):
    """Reference-shard replica: SimBFT plus the proposer/validator rules."""

    def __init__(self, rid, ctx, genesis_blocks: dict):
        super().__init__(rid, ctx)
        self.chain = RefChainState(ctx.config.k, ctx.partition, genesis_blocks)
        self.pool: dict[Hash, tuple] = {}  # id -> (arrival, ctx)
        self.candidates: dict[int, dict] = defaultdict(dict)  # shard -> last hash -> commitment
        t = ctx.timing
        self.bft = SimBFT(self, self, REFERENCE_SHARD, lambda h: self.bft.decided_at + t.i_r, t.round_timeout)
        self.silent = "silent_cross_shard" in self.byz

    # node events
    def on_start(self):
        self.bft.start()

    def on_timer(self, tag):
        self.bft.on_timer(tag)

    def on_inject(self, payload):
        kind, txs = payload
        if kind == "ctx":
            for ctx in txs:
                if ctx.id not in self.pool and ctx.id not in self.chain.ctx_ids:
                    self.pool[ctx.id] = (self.now, ctx)

    def on_BftProposal(self, sender, msg):
        self.bft.on_message(sender, msg)

    on_BftVote = on_BftProposal
    on_BftFetch = on_BftProposal
    on_BftFinalize = on_BftProposal

    def on_CommitmentSubmit(self, sender, msg):
        com = msg.commitment
        if not 1 <= com.shard <= self.ctx.config.k or not com.headers:
            return
        last = com.headers[-1]
        if last.height <= self.chain.last_commit[com.shard].height:
            return
        self.observe("commit_arrival", shard=com.shard, height=last.height, hash=com.hash_chain[-1].hex(),
                     ref_height=com.ref_height, replica=str(self.id), time=self.now)
        self.candidates[com.shard][com.hash_chain[-1]] = com

    # SimBFT app hooks
    def _ordered_pool(self):
        return [c for _, c in sorted(self.pool.values(), key=lambda e: (e[0], e[1].id))]

    def bft_propose(self, height):
        coms = [c for a in sorted(self.candidates) for c in self.candidates[a].values()]
        chosen_coms, ctxs = build_proposal(self._ordered_pool(), self.chain, coms, self.ctx.keyring,
                                           self.f, self.ctx.partition, self.ctx.max_ctx_per_block)
        return ReferenceBlock(self.chain.tip, height, chosen_coms, ctxs)

    def bft_alt_block(self, block):
        if block.cross_txs:
            return ReferenceBlock(block.parent_hash, block.height, block.commitments, block.cross_txs[:-1])
        if block.commitments:
            return ReferenceBlock(block.parent_hash, block.height, block.commitments[:-1], block.cross_txs)
        return block

    def bft_validate(self, block, height):
        if not isinstance(block, ReferenceBlock):
            return False
        return bool(validate_block(self.chain, block, self.ctx.keyring, self.f, self.ctx.partition,
                                   self.ctx.max_ctx_per_block))

    def bft_decide(self, block, cert, height):
        self.chain.apply(block)
        for ctx in block.cross_txs:
            self.pool.pop(ctx.id, None)
        for com in block.commitments:
            keep = self.chain.last_commit[com.shard].height
            self.candidates[com.shard] = {
                h: c for h, c in self.candidates[com.shard].items() if c.headers[-1].height > keep
            }
        if not self.silent:
            msg = RefBlockMsg(block, cert)
            topo = self.ctx.topology
            for a in range(1, self.ctx.config.k + 1):
                self.multicast(topo.linked(self.id, a), msg)


# ---------------------------------------------------------------------------
# export


def key_json(key) -> list:
    return [key.account, key.slot]


def ctx_json(ctx) -> dict:
    return {
        "id": ctx.id.hex(),
        "reads": sorted(key_json(k) for k in ctx.reads),
        "writes": sorted(key_json(k) for k in ctx.writes),
        "shards": sorted(ctx.shards),
    }


def ref_block_json(block: ReferenceBlock) -> dict:
    return {
        "height": block.height,
        "hash": block.hash.hex(),
        "parent": block.parent_hash.hex(),
        "commitments": [
            {
                "shard": c.shard,
                "hash_chain": [h.hex() for h in c.hash_chain],
                "parents": [hd.parent_hash.hex() for hd in c.headers],
                "heights": [hd.height for hd in c.headers],
                "ref_height": c.ref_height,
                "state_digest": c.state_digest.hex(),
            }
            for c in block.commitments
        ],
        "ctxs": [ctx_json(c) for c in block.cross_txs],
    }


def export_jsonl(blocks, path, to_json=ref_block_json) -> None:
    with open(path, "w") as fh:
        for b in blocks:
            fh.write(json.dumps(to_json(b), sort_keys=True, separators=(",", ":")) + "\n")
