"""Two-phase-commit baseline with a BFT coordinator shard.

Every shard (coordinator and workers) runs SimBFT with 3f+1 replicas.

Coordinator block r processes, in order:
  1. new ctxs, admitted against the lock table of block r-1 (exclusive on
     reads and writes) plus the ctxs admitted earlier in the same block;
  2. shard commit messages (phase one: the shard locked the ctx's keys);
  3. shard acks (phase two done at that shard: its keys are released).

A ctx is *ready* once every involved shard's commit is on the coordinator
chain. Worker blocks carry the ids they lock and the ready ids they execute;
both lists are mandated by the coordinator chain prefix the block names.
"""

from __future__ import annotations

from collections import OrderedDict, defaultdict
from dataclasses import dataclass
from functools import cached_property

from .bft import SimBFT, commit_digest
from .codec import record
from .core import REFERENCE_SHARD, ZERO_HASH, Certificate, Hash, PartitionMap, hash_of, validate_certificate
from .crossexec import DataRequest, DataResponse, DataTracker, answer_request
from .node import Node
from .reference import ACCEPT, RefBlockMsg, Verdict, check_finality, ctx_json, ctx_well_formed
from .state import ShardState, apply
from .worker import result_digest


# ---------------------------------------------------------------------------
# worker blocks and shard messages


@record("TpcWorkerHeader")
@dataclass(frozen=True)
class TpcWorkerHeader:
    shard: int
    parent_hash: Hash
    height: int
    coord_height: int
    state_digest: Hash
    body_hash: Hash

    @cached_property
    def hash(self) -> Hash:
        return hash_of(self)


@record("TpcWorkerBlock")
@dataclass(frozen=True)
class TpcWorkerBlock:
    header: TpcWorkerHeader
    commit_ids: tuple = ()
    exec_ids: tuple = ()
    intra_txs: tuple = ()

    @property
    def hash(self) -> Hash:
        return self.header.hash

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def coord_height(self) -> int:
        return self.header.coord_height


def tpc_body_hash(commit_ids, exec_ids, intra) -> Hash:
    return hash_of((tuple(commit_ids), tuple(exec_ids), tuple(t.id for t in intra)))


def genesis_block(shard: int, digest: Hash) -> TpcWorkerBlock:
    return TpcWorkerBlock(TpcWorkerHeader(shard, ZERO_HASH, 0, 0, digest, tpc_body_hash((), (), ())))


@record("TpcCommit")
@dataclass(frozen=True)
class TpcCommit:
    shard: int
    ctx_ids: tuple
    header: TpcWorkerHeader
    cert: Certificate


@record("TpcAck")
@dataclass(frozen=True)
class TpcAck:
    shard: int
    ctx_ids: tuple
    header: TpcWorkerHeader
    cert: Certificate


def shard_msg_valid(msg, keyring, f: int) -> bool:
    """Header matches the certificate, and 2f+1 replicas of the shard finalized it."""
    h = msg.header.hash
    return (msg.header.shard == msg.shard and msg.cert.block_hash == h
            and validate_certificate(msg.cert, keyring, msg.shard, 2 * f + 1, commit_digest(h)))


# ---------------------------------------------------------------------------
# coordinator chain


@record("CoordinatorBlock")
@dataclass(frozen=True)
class CoordinatorBlock:
    parent_hash: Hash
    height: int
    new_ctxs: tuple
    commits: tuple  # TpcCommit
    acks: tuple  # TpcAck

    @cached_property
    def hash(self) -> Hash:
        return hash_of(self)


GENESIS_COORD = CoordinatorBlock(ZERO_HASH, 0, (), (), ())


class TpcLockTable:
    """key -> id of the ctx holding it. Exclusive for reads and writes."""

    def __init__(self):
        self.owner: dict = {}

    def free(self, ctx, extra=()) -> bool:
        return not any(k in self.owner or k in extra for k in ctx.keys)

    def lock(self, ctx):
        for k in ctx.keys:
            self.owner[k] = ctx.id

    def release(self, ctx, keys):
        for k in keys:
            if self.owner.get(k) == ctx.id:
                del self.owner[k]


class TpcChainState:
    """Replay of the finalized coordinator chain."""

    def __init__(self, k: int, partition: PartitionMap):
        self.k = k
        self.partition = partition
        self.height = 0
        self.tip = GENESIS_COORD.hash
        self.blocks: list = [GENESIS_COORD]
        self.locks = TpcLockTable()
        self.ctxs: dict = {}  # id -> ctx
        self.admitted_at: dict = {}  # id -> coordinator height
        self.commit_digest: dict = defaultdict(dict)  # id -> {shard: post-state digest of its lock block}
        self.ready_at: dict = {}
        self.acked: dict = defaultdict(set)
        self.done_at: dict = {}
        self.admitted_for = {a: [] for a in range(1, k + 1)}  # (height, ctx) in chain order
        self.ready_for = {a: [] for a in range(1, k + 1)}
        self.seen_headers: set = set()

    def keys_at(self, ctx, shard: int):
        home = self.partition.home
        return [k for k in sorted(ctx.keys) if home(k) == shard]

    def apply(self, block: CoordinatorBlock):
        assert block.height == self.height + 1 and block.parent_hash == self.tip, "out-of-order coordinator block"
        r = block.height
        for ctx in block.new_ctxs:
            self.locks.lock(ctx)
            self.ctxs[ctx.id] = ctx
            self.admitted_at[ctx.id] = r
            for a in sorted(ctx.shards):
                self.admitted_for[a].append((r, ctx))
        for msg in block.commits:
            self.seen_headers.add(msg.header.hash)
            for cid in msg.ctx_ids:
                got = self.commit_digest[cid]
                got[msg.shard] = msg.header.state_digest
                ctx = self.ctxs[cid]
                if len(got) == len(ctx.shards):
                    self.ready_at[cid] = r
                    for a in sorted(ctx.shards):
                        self.ready_for[a].append((r, ctx))
        for msg in block.acks:
            self.seen_headers.add(msg.header.hash)
            for cid in msg.ctx_ids:
                ctx = self.ctxs[cid]
                self.acked[cid].add(msg.shard)
                self.locks.release(ctx, self.keys_at(ctx, msg.shard))
                if len(self.acked[cid]) == len(ctx.shards):
                    self.done_at[cid] = r
        self.blocks.append(block)
        self.height = r
        self.tip = block.hash

    @staticmethod
    def _range(entries, lo: int, hi: int) -> list:
        """Ctxs of ``entries`` with lo < height <= hi (entries are height-sorted)."""
        out = []
        for i in range(len(entries) - 1, -1, -1):
            h, ctx = entries[i]
            if h <= lo:
                break
            if h <= hi:
                out.append(ctx)
        out.reverse()
        return out

    def commits_due(self, shard: int, lo: int, hi: int) -> list:
        return self._range(self.admitted_for[shard], lo, hi)

    def execs_due(self, shard: int, lo: int, hi: int) -> list:
        return self._range(self.ready_for[shard], lo, hi)


def check_commit(chain: TpcChainState, msg, seen: set) -> bool:
    """Every id admitted, involving the shard, and not yet committed by it."""
    if msg.header.hash in chain.seen_headers or not msg.ctx_ids:
        return False
    for cid in msg.ctx_ids:
        ctx = chain.ctxs.get(cid)
        if ctx is None or msg.shard not in ctx.shards or msg.shard in chain.commit_digest.get(cid, ()):
            return False
        if (cid, msg.shard) in seen:
            return False
    return True


def check_ack(chain: TpcChainState, msg, seen: set) -> bool:
    if msg.header.hash in chain.seen_headers or not msg.ctx_ids:
        return False
    for cid in msg.ctx_ids:
        if cid not in chain.ready_at or msg.shard not in chain.ctxs[cid].shards:
            return False
        if msg.shard in chain.acked.get(cid, ()) or (cid, msg.shard) in seen:
            return False
    return True


def tpc_admit(chain: TpcChainState, pool, partition: PartitionMap, max_ctx=None) -> tuple:
    """Ctxs from ``pool`` (arrival order) whose keys are all unlocked."""
    taken: set = set()
    out = []
    seen = set()
    for ctx in pool:
        if max_ctx is not None and len(out) >= max_ctx:
            break
        if ctx.id in chain.ctxs or ctx.id in seen or not ctx_well_formed(ctx, partition):
            continue
        if chain.locks.free(ctx, taken):
            out.append(ctx)
            seen.add(ctx.id)
            taken.update(ctx.keys)
    return tuple(out)


def validate_coord_block(chain: TpcChainState, block, keyring, f: int, partition, max_ctx=None) -> Verdict:
    if not isinstance(block, CoordinatorBlock):
        return Verdict(False, "bad_type")
    if block.height != chain.height + 1 or block.parent_hash != chain.tip:
        return Verdict(False, "bad_parent")
    if max_ctx is not None and len(block.new_ctxs) > max_ctx:
        return Verdict(False, "over_capacity")
    taken: set = set()
    ids = set()
    for ctx in block.new_ctxs:
        if ctx.id in chain.ctxs or ctx.id in ids or not ctx_well_formed(ctx, partition):
            return Verdict(False, "bad_ctx")
        if not chain.locks.free(ctx, taken):
            return Verdict(False, "lock_conflict")
        ids.add(ctx.id)
        taken.update(ctx.keys)
    for msgs, check in ((block.commits, check_commit), (block.acks, check_ack)):
        seen: set = set()
        for m in msgs:
            if not shard_msg_valid(m, keyring, f):
                return Verdict(False, "bad_certificate")
            if not check(chain, m, seen):
                return Verdict(False, "bad_shard_message")
            seen.update((cid, m.shard) for cid in m.ctx_ids)
    return ACCEPT


# ---------------------------------------------------------------------------
# coordinator replica


class CoordinatorReplica(Node):
    def __init__(self, rid, ctx, genesis_blocks=None):
        super().__init__(rid, ctx)
        self.chain = TpcChainState(ctx.config.k, ctx.partition)
        self.pool: dict = {}
        self.candidates: dict = {}  # (kind, header hash) -> message, in arrival order
        t = ctx.timing
        self.bft = SimBFT(self, self, REFERENCE_SHARD, lambda h: self.bft.decided_at + t.i_r, t.round_timeout)
        self.silent = "silent_cross_shard" in self.byz

    def on_start(self):
        self.bft.start()

    def on_timer(self, tag):
        self.bft.on_timer(tag)

    def on_inject(self, payload):
        kind, txs = payload
        if kind == "ctx":
            for c in txs:
                if c.id not in self.pool and c.id not in self.chain.ctxs:
                    self.pool[c.id] = (self.now, c)

    def on_BftProposal(self, sender, msg):
        self.bft.on_message(sender, msg)

    on_BftVote = on_BftProposal
    on_BftFetch = on_BftProposal
    on_BftFinalize = on_BftProposal

    def _on_shard_msg(self, kind, sender, msg):
        if sender.shard != msg.shard or msg.header.hash in self.chain.seen_headers:
            return
        key = (kind, msg.header.hash)
        if key not in self.candidates:
            self.observe("tpc_" + kind + "_arrival", shard=msg.shard, height=msg.header.height,
                         replica=str(self.id), time=self.now)
            self.candidates[key] = msg

    def on_TpcCommit(self, sender, msg):
        self._on_shard_msg("commit", sender, msg)

    def on_TpcAck(self, sender, msg):
        self._on_shard_msg("ack", sender, msg)

    def _pick(self, kind, check):
        seen: set = set()
        out = []
        for (kd, _), m in self.candidates.items():
            if kd != kind or not shard_msg_valid(m, self.ctx.keyring, self.f):
                continue
            if check(self.chain, m, seen):
                out.append(m)
                seen.update((cid, m.shard) for cid in m.ctx_ids)
        return tuple(sorted(out, key=lambda m: (m.shard, m.header.height)))

    def bft_propose(self, height):
        pool = [c for _, c in sorted(self.pool.values(), key=lambda e: (e[0], e[1].id))]
        ctxs = tpc_admit(self.chain, pool, self.ctx.partition, self.ctx.max_ctx_per_block)
        return CoordinatorBlock(self.chain.tip, height, ctxs, self._pick("commit", check_commit),
                                self._pick("ack", check_ack))

    def bft_alt_block(self, block):
        if block.new_ctxs:
            return CoordinatorBlock(block.parent_hash, block.height, block.new_ctxs[:-1], block.commits, block.acks)
        return block

    def bft_validate(self, block, height):
        return bool(validate_coord_block(self.chain, block, self.ctx.keyring, self.f, self.ctx.partition,
                                         self.ctx.max_ctx_per_block))

    def bft_decide(self, block, cert, height):
        self.chain.apply(block)
        for c in block.new_ctxs:
            self.pool.pop(c.id, None)
        seen = self.chain.seen_headers
        self.candidates = {k: m for k, m in self.candidates.items() if k[1] not in seen}
        if not self.silent:
            msg = RefBlockMsg(block, cert)
            topo = self.ctx.topology
            for a in range(1, self.ctx.config.k + 1):
                self.multicast(topo.linked(self.id, a), msg)


# ---------------------------------------------------------------------------
# worker replica


def tpc_worker_commit(locks: dict, commit_ctxs, shard: int, partition: PartitionMap) -> dict:
    """Local lock table after locking ``commit_ctxs`` (keys homed at ``shard``)."""
    out = dict(locks)
    for ctx in commit_ctxs:
        for k in ctx.keys:
            if partition.home(k) == shard:
                out[k] = ctx.id
    return out


def tpc_execute_and_ack(state: ShardState, locks: dict, exec_ctxs, foreign: dict, shard: int,
                        partition: PartitionMap):
    """Execute ready ctxs and unlock their keys. Returns (outcome, locks)."""
    out = apply(state, exec_ctxs, foreign, shard, partition)
    new_locks = dict(locks)
    for ctx in exec_ctxs:
        for k in ctx.keys:
            if new_locks.get(k) == ctx.id:
                del new_locks[k]
    return out, new_locks


class TpcWorkerReplica(Node):
    STATE_WINDOW = 64

    def __init__(self, rid, ctx, genesis_blocks: dict):
        super().__init__(rid, ctx)
        me = rid.shard
        self.shard = me
        self.coord = TpcChainState(ctx.config.k, ctx.partition)
        self.coord_buffer: dict = {}
        g = genesis_blocks[me]
        gstate = ctx.genesis[me]
        self.last = g
        self.state = gstate
        self.locks: dict = {}
        self.states_by_digest: OrderedDict = OrderedDict({gstate.digest: gstate})
        self.cache: dict = {}  # block hash -> (post state, results, locks)
        self.mempool: dict = {}
        self.committed_intra: set = set()
        self.data = DataTracker()
        self.pending_requests: list = []
        t = ctx.timing
        phase = ctx.phases.get(me, 0.0)
        self.bft = SimBFT(self, self, me, lambda h: phase + h * t.i_w, t.round_timeout)
        self.max_intra = getattr(t, "max_intra_per_block", 200)
        self.delta = t.delta
        self.silent = "silent_cross_shard" in self.byz
        self.reporter = rid.index < ctx.config.f + 1

    def on_start(self):
        self.bft.start()

    def on_timer(self, tag):
        if tag[0] == "data":
            self._rerequest(tag[1])
        else:
            self.bft.on_timer(tag)

    def on_inject(self, payload):
        kind, txs = payload
        if kind == "intra":
            for tx in txs:
                if tx.id not in self.committed_intra:
                    self.mempool.setdefault(tx.id, tx)

    def on_BftProposal(self, sender, msg):
        self.bft.on_message(sender, msg)

    on_BftVote = on_BftProposal
    on_BftFetch = on_BftProposal
    on_BftFinalize = on_BftProposal

    # -- coordinator chain -------------------------------------------------

    def on_RefBlockMsg(self, sender, msg):
        block = msg.block
        if block.height <= self.coord.height or block.height in self.coord_buffer:
            return
        if not isinstance(block, CoordinatorBlock) or not check_finality(block, msg.cert, self.ctx.keyring, self.f):
            return
        self.coord_buffer[block.height] = block
        progressed = False
        while self.coord.height + 1 in self.coord_buffer:
            b = self.coord_buffer.pop(self.coord.height + 1)
            if b.parent_hash != self.coord.tip:
                break
            self.coord.apply(b)
            self._plan_data(b)
            progressed = True
        if progressed:
            self.bft.poke()

    def _plan_data(self, block):
        me = self.shard
        r = block.height
        home = self.ctx.partition.home
        need: dict = defaultdict(set)
        for ctx in self.coord.execs_due(me, r - 1, r):
            pins = self.coord.commit_digest[ctx.id]
            for k in ctx.reads:
                b = home(k)
                if b != me:
                    need[(b, pins[b])].add(k)
        for target in sorted(need):
            b, digest = target
            self.data.expect(r, target, need[target], digest, self.now)
            self._request(DataRequest(me, b, r, frozenset(need[target]), digest))
        if need:
            self.timer(2 * self.delta, ("data", r))

    # -- data exchange -----------------------------------------------------

    def _request(self, req):
        self.multicast(self.ctx.topology.chosen(self.id, req.target), req)

    def _rerequest(self, batch):
        need = self.data.needed.get(batch)
        if not need:
            return
        pending = self.data.outstanding(batch)
        for target in pending:
            keys, digest = need[target]
            self._request(DataRequest(self.shard, target[0], batch, keys, digest))
        if pending:
            self.timer(2 * self.delta, ("data", batch))

    def on_DataRequest(self, sender, req: DataRequest):
        if self.silent or req.target != self.shard or req.digest is None:
            return
        if not self._answer(sender, req):
            self.pending_requests.append((sender, req))

    def _answer(self, sender, req) -> bool:
        resp = answer_request(self.states_by_digest, req.digest, req, "tamper_data_responses" in self.byz)
        if resp is None:
            return False
        self.send(sender, resp)
        return True

    def on_DataResponse(self, sender, resp: DataResponse):
        if sender.shard != resp.target:
            return
        batch = resp.ref_height
        target = (resp.target, resp.against_digest)
        if self.data.offer(batch, target, resp, self.now) and self.data.complete(batch):
            self.observe("data_done", shard=self.shard, replica=str(self.id), ref_height=batch,
                         duration=self.now - self.data.started.get(batch, self.now), time=self.now)
            self.bft.poke()

    def _foreign(self, lo: int, hi: int) -> dict:
        vals: dict = {}
        for b in range(lo + 1, hi + 1):
            vals.update(self.data.values.get(b, {}))
        return vals

    # -- block construction / validation ----------------------------------

    def _evaluate(self, parent, coord_height, intra):
        """Mandated lists, post state, results and locks for a child of ``parent``."""
        me = self.shard
        lo = parent.coord_height
        execs = self.coord.execs_due(me, lo, coord_height)
        commits = self.coord.commits_due(me, lo, coord_height)
        key = (self.state.digest, lo, coord_height, tpc_body_hash([c.id for c in commits], [c.id for c in execs], intra))
        memo = self.ctx.exec_cache.get(("tpc", me) + key)
        if memo is None:
            out, locks = tpc_execute_and_ack(self.state, self.locks, execs, self._foreign(lo, coord_height), me,
                                             self.ctx.partition)
            locks = tpc_worker_commit(locks, commits, me, self.ctx.partition)
            state, results = out.new_state, out.results
            if intra:
                state = apply(state, intra, None, me, self.ctx.partition).new_state
            memo = (commits, execs, state, results, locks)
            self.ctx.exec_cache[("tpc", me) + key] = memo
        return memo

    def _data_ready(self, lo: int, hi: int) -> bool:
        return all(self.data.complete(b) for b in range(lo + 1, hi + 1))

    def bft_propose(self, height):
        parent = self.last
        lo = parent.coord_height
        c = lo
        while c < self.coord.height and self.data.complete(c + 1):
            c += 1
        _, execs, _, _, locks = self._evaluate(parent, c, ())
        # intra txs may not touch keys locked after this block's execs and commits
        intra = []
        for tid, tx in self.mempool.items():
            if len(intra) >= self.max_intra:
                break
            if tid not in self.committed_intra and not any(k in locks for k in tx.keys):
                intra.append(tx)
        intra = tuple(intra)
        return self._make(parent, c, intra)

    def _make(self, parent, c, intra):
        commits, execs, state, results, locks = self._evaluate(parent, c, intra)
        cids, eids = tuple(x.id for x in commits), tuple(x.id for x in execs)
        hdr = TpcWorkerHeader(self.shard, parent.hash, parent.height + 1, c, state.digest,
                              tpc_body_hash(cids, eids, intra))
        block = TpcWorkerBlock(hdr, cids, eids, intra)
        self.cache[block.hash] = (state, results, locks)
        return block

    def bft_alt_block(self, block):
        intra = block.intra_txs[: len(block.intra_txs) // 2]
        if intra == block.intra_txs:
            return block
        return self._make(self.last, block.coord_height, intra)

    def bft_validate(self, block, height):
        if not isinstance(block, TpcWorkerBlock):
            return False
        hdr = block.header
        parent = self.last
        if hdr.shard != self.shard or hdr.parent_hash != parent.hash or hdr.height != parent.height + 1:
            return False
        if hdr.coord_height < parent.coord_height:
            return False
        if hdr.coord_height > self.coord.height or not self._data_ready(parent.coord_height, hdr.coord_height):
            return None  # not decidable yet
        if tpc_body_hash(block.commit_ids, block.exec_ids, block.intra_txs) != hdr.body_hash:
            return False
        if len(block.intra_txs) > self.max_intra:
            return False
        commits, execs, _, _, locks = self._evaluate(parent, hdr.coord_height, ())
        if block.commit_ids != tuple(x.id for x in commits) or block.exec_ids != tuple(x.id for x in execs):
            return False
        seen = set()
        for tx in block.intra_txs:
            if getattr(tx, "shard", None) != self.shard or tx.id in seen or tx.id in self.committed_intra:
                return False
            if any(k in locks for k in tx.keys):
                return False
            seen.add(tx.id)
        _, _, state, results, locks = self._evaluate(parent, hdr.coord_height, block.intra_txs)
        if state.digest != hdr.state_digest:
            return False
        self.cache[block.hash] = (state, results, locks)
        return True

    def bft_decide(self, block, cert, height):
        entry = self.cache.get(block.hash)
        if entry is None:
            # learned through a finalize certificate without validating
            _, _, state, results, locks = self._evaluate(self.last, block.coord_height, block.intra_txs)
            entry = (state, results, locks)
        state, results, locks = entry
        lo = self.last.coord_height
        self.state, self.locks, self.last = state, locks, block
        self.cache.clear()
        self.states_by_digest[state.digest] = state
        while len(self.states_by_digest) > self.STATE_WINDOW:
            self.states_by_digest.popitem(last=False)
        for tx in block.intra_txs:
            self.committed_intra.add(tx.id)
            self.mempool.pop(tx.id, None)
        if results:
            self.observe("ctx_exec", shard=self.shard, replica=str(self.id), height=block.height,
                         results={r.tx_id.hex(): result_digest(r) for r in results})
        if self.reporter:
            self.observe("tpc_worker_final", shard=self.shard, replica=str(self.id), height=block.height,
                         hash=block.hash.hex(), coord_height=block.coord_height, time=self.now,
                         commits=[c.hex() for c in block.commit_ids], execs=[c.hex() for c in block.exec_ids],
                         intra=[t.id.hex() for t in block.intra_txs])
            if not self.silent:
                coord = self.ctx.config.replicas(REFERENCE_SHARD)
                if block.commit_ids:
                    self.multicast(coord, TpcCommit(self.shard, block.commit_ids, block.header, cert))
                if block.exec_ids:
                    self.multicast(coord, TpcAck(self.shard, block.exec_ids, block.header, cert))
        for b in range(lo + 1, block.coord_height + 1):
            self.data.forget(b)
        if self.pending_requests:
            self.pending_requests = [(s, r) for s, r in self.pending_requests if not self._answer(s, r)]


# ---------------------------------------------------------------------------
# export


def coord_block_json(block: CoordinatorBlock) -> dict:
    def shard_msg(m):
        return {"shard": m.shard, "height": m.header.height, "hash": m.header.hash.hex(),
                "ctx_ids": [c.hex() for c in m.ctx_ids]}

    return {
        "height": block.height,
        "hash": block.hash.hex(),
        "parent": block.parent_hash.hex(),
        "ctxs": [ctx_json(c) for c in block.new_ctxs],
        "commits": [shard_msg(m) for m in block.commits],
        "acks": [shard_msg(m) for m in block.acks],
    }


def worker_block_json(block: TpcWorkerBlock) -> dict:
    return {
        "shard": block.header.shard,
        "height": block.height,
        "hash": block.hash.hex(),
        "parent": block.header.parent_hash.hex(),
        "coord_height": block.coord_height,
        "state_digest": block.header.state_digest.hex(),
        "commits": [c.hex() for c in block.commit_ids],
        "execs": [c.hex() for c in block.exec_ids],
        "intra": [t.id.hex() for t in block.intra_txs],
    }


def chain_logs(nodes, honest, sc) -> dict:
    coord = [r for r in honest if r.shard == REFERENCE_SHARD]
    best = max(coord, key=lambda r: (nodes[r].chain.height, -r.index))
    logs = {"coordinator": [coord_block_json(b) for b in nodes[best].chain.blocks[1:]]}
    for a in range(1, sc.k + 1):
        reps = [r for r in honest if r.shard == a]
        if not reps:
            continue
        best = max(reps, key=lambda r: (nodes[r].bft.height, -r.index))
        hist = nodes[best].bft.history
        logs[f"shard{a}"] = [worker_block_json(hist[h][0]) for h in sorted(hist)]
    return logs


__all__ = [
    "CoordinatorBlock", "TpcLockTable", "TpcChainState", "tpc_admit", "TpcCommit", "TpcAck",
    "CoordinatorReplica", "TpcWorkerReplica", "tpc_worker_commit", "tpc_execute_and_ack",
    "validate_coord_block", "coord_block_json", "worker_block_json", "chain_logs",
]
