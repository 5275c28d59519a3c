"""Rivet worker shard: consensus-free block certification with f+1 votes.

The leader proposes a block every worker tick. It extends the certified but
uncommitted tip when no new relevant ctx was finalized since that tip's
reference height; otherwise it rebuilds on the last committed block and
executes every relevant ctx finalized since that commitment (a reorg). Once a
block gathers f+1 signatures the leader submits a commitment covering the
certified chain to the reference shard. Replicas blame a leader whose shard
shows no commitment within T_f and change view on f+1 blames.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

from .codec import record
from .core import (
    REFERENCE_SHARD, ZERO_HASH, Certificate, Hash, Signature, hash_of, validate_certificate,
)
from .crossexec import DataRequest, DataResponse, DataTracker, answer_request, plan_requests
from .node import Node
from .reference import RefBlockMsg, RefChainState, check_finality, CommitmentSubmit
from .state import ShardState, apply

WRONG_VIEW, WRONG_LEADER, BAD_PARENT = "wrong_view", "wrong_leader", "bad_parent"
STALE_REF, BAD_STATE, BAD_CTX_LIST, EQUIVOCATION = "stale_ref", "bad_state", "bad_ctx_list", "equivocation"
MISSING_DATA = "missing_data"


@record("WorkerHeader")
@dataclass(frozen=True)
class WorkerHeader:
    shard: int
    parent_hash: Hash
    height: int
    ref_height: int
    state_digest: Hash
    body_hash: Hash
    view: int

    @cached_property
    def hash(self) -> Hash:
        return hash_of(self)


@record("WorkerBlock")
@dataclass(frozen=True)
class WorkerBlock:
    header: WorkerHeader
    cross_txs: tuple = ()
    intra_txs: tuple = ()

    @property
    def hash(self) -> Hash:
        return self.header.hash

    @property
    def parent_hash(self) -> Hash:
        return self.header.parent_hash

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def ref_height(self) -> int:
        return self.header.ref_height

    @property
    def state_digest(self) -> Hash:
        return self.header.state_digest

    @property
    def proposer_view(self) -> int:
        return self.header.view


def body_hash(cross_txs, intra_txs) -> Hash:
    return hash_of((tuple(c.id for c in cross_txs), tuple(t.id for t in intra_txs)))


EMPTY_BODY = body_hash((), ())


def genesis_block(shard: int, state_digest: Hash) -> WorkerBlock:
    return WorkerBlock(WorkerHeader(shard, ZERO_HASH, 0, 0, state_digest, EMPTY_BODY, 0))


@record("BlockCommitment")
@dataclass(frozen=True)
class BlockCommitment:
    shard: int
    state_digest: Hash
    hash_chain: tuple
    ref_height: int
    certificates: tuple
    headers: tuple  # parent-linkage evidence, one header per hash


def blame_digest(shard: int, view: int) -> Hash:
    return hash_of(("blame", shard, view))


@record("ViewChangeCertificate")
@dataclass(frozen=True)
class ViewChangeCertificate:
    shard: int
    view: int
    blames: frozenset  # Signatures over blame_digest(shard, view)


def validate_vcc(vcc: ViewChangeCertificate, keyring, f: int) -> bool:
    return validate_certificate(Certificate(ZERO_HASH, vcc.blames), keyring, vcc.shard, f + 1,
                                blame_digest(vcc.shard, vcc.view))


# wire messages

@record("WorkerPropose")
@dataclass(frozen=True)
class WorkerPropose:
    block: WorkerBlock
    vcc: ViewChangeCertificate | None = None


@record("WorkerVote")
@dataclass(frozen=True)
class WorkerVote:
    block_hash: Hash
    sig: Signature


@record("WorkerCertified")
@dataclass(frozen=True)
class WorkerCertified:
    block_hash: Hash
    cert: Certificate


@record("BlameMsg")
@dataclass(frozen=True)
class BlameMsg:
    view: int
    sig: Signature


@record("ViewChangeMsg")
@dataclass(frozen=True)
class ViewChangeMsg:
    vcc: ViewChangeCertificate


@record("SyncRequest")
@dataclass(frozen=True)
class SyncRequest:
    hashes: tuple


@dataclass(frozen=True)
class SyncResponse:
    blocks: tuple
    state: ShardState


@dataclass(frozen=True)
class Reject:
    reason: str


@dataclass(frozen=True)
class Defer:
    reason: str


def leader_of(view: int, size: int) -> int:
    return view % size


def result_digest(res) -> str:
    return hash_of((res.verdict, res.reason, res.writes)).hex()[:16]


def execute_block(ctx, shard: int, parent_state: ShardState, batches, intra, foreign_of, memo_key=None):
    """Π over the mandated ctx batches (one foreign snapshot each) then intra txs."""
    cache = ctx.exec_cache
    if memo_key is not None and memo_key in cache:
        return cache[memo_key]
    state = parent_state
    results = []
    for h, ctxs in batches:
        out = apply(state, ctxs, foreign_of(h), shard, ctx.partition)
        state = out.new_state
        results.extend(out.results)
    if intra:
        out = apply(state, intra, None, shard, ctx.partition)
        state = out.new_state
        intra_res = out.results
    else:
        intra_res = ()
    value = (state, tuple(results), tuple(intra_res))
    if memo_key is not None:
        cache[memo_key] = value
    return value


class WorkerReplica(Node):
    def __init__(self, rid, ctx, genesis_blocks: dict):
        super().__init__(rid, ctx)
        me = rid.shard
        self.shard = me
        self.size = ctx.config.worker_size
        self.ref = RefChainState(ctx.config.k, ctx.partition, genesis_blocks)
        g = genesis_blocks[me]
        gstate = ctx.genesis[me]
        self.blocks: dict[Hash, WorkerBlock] = {g.hash: g}
        self.post_state: dict[Hash, ShardState] = {g.hash: gstate}
        self.results: dict[Hash, tuple] = {}
        self.states_by_digest: dict[Hash, ShardState] = {gstate.digest: gstate}
        self.certs: dict[Hash, Certificate] = {}
        self.committed = g.hash
        self.committed_height = 0
        self.committed_intra: set = set()
        self.final_log: list = []  # (height, hash hex) in finalization order
        self.tip: Hash | None = None
        self.view = 0
        self.voted: dict[tuple, Hash] = {}
        self.vccs: dict[int, ViewChangeCertificate] = {}
        self.blames: dict[int, dict] = defaultdict(dict)
        self.mempool: dict[Hash, object] = {}
        self.data = DataTracker()
        self.ref_buffer: dict[int, tuple] = {}
        self.pending_requests: list = []
        self.deferred: dict[Hash, tuple] = {}
        self.votes: dict[Hash, dict] = defaultdict(dict)
        self.outstanding: Hash | None = None
        self.wants_propose = False
        self.syncing: tuple | None = None  # (last hash, hashes, last header)
        self.pending_commits: list = []
        self.blame_epoch = 0
        self.blame_expired = False
        t = ctx.timing
        self.i_w = t.i_w
        self.t_f = t.t_f
        self.delta = t.delta
        self.phase = ctx.phases.get(me, 0.0)
        self.max_intra = getattr(t, "max_intra_per_block", 200)

    # -- helpers -----------------------------------------------------------

    def leader(self, view: int | None = None):
        v = self.view if view is None else view
        return self.peers()[leader_of(v, self.size)]

    def is_leader(self) -> bool:
        return self.leader() == self.id

    def descends(self, h: Hash, ancestor: Hash) -> bool:
        anc = self.blocks.get(ancestor)
        if anc is None:
            return False
        while True:
            if h == ancestor:
                return True
            b = self.blocks.get(h)
            if b is None or b.height <= anc.height:
                return False
            h = b.parent_hash

    def doomed(self, h: Hash) -> bool:
        """Block can no longer be part of a valid commitment."""
        b = self.blocks.get(h)
        if b is None or not self.descends(h, self.committed):
            return True
        return b.ref_height < self.ref.last_ctx[self.shard]

    def branch_intra(self, h: Hash) -> set:
        ids = set()
        while h != self.committed:
            b = self.blocks.get(h)
            if b is None:
                break
            ids.update(t.id for t in b.intra_txs)
            h = b.parent_hash
        return ids

    def foreign_of(self, h: int) -> dict:
        return self.data.values.get(h, {})

    def batches_ready(self, batches) -> bool:
        return all(self.data.complete(h) for h, _ in batches)

    def mandate(self):
        """(parent hash, ctx batches) the leader must build on right now."""
        me = self.shard
        known = self.ref.height
        tip = self.tip
        if tip is not None:
            tb = self.blocks[tip]
            if not self.ref.relevant_ctxs(me, tb.ref_height + 1, known):
                return tip, []
        s = self.ref.last_commit[me].included_at
        return self.committed, self.ref.relevant_batches(me, s, known)

    def _arm_blame(self):
        self.blame_epoch += 1
        self.blame_expired = False
        self.timer(self.t_f, ("blame", self.blame_epoch))

    # -- lifecycle ---------------------------------------------------------

    def on_start(self):
        self.timer(self.phase, ("tick",))
        self._arm_blame()

    def on_timer(self, tag):
        kind = tag[0]
        if kind == "tick":
            self.timer(self.i_w, ("tick",))
            if self.is_leader():
                self.wants_propose = True
                self.try_propose()
        elif kind == "blame":
            if tag[1] == self.blame_epoch:
                self.blame_expired = True
        elif kind == "data":
            self._rerequest(tag[1])
        elif kind == "sync":
            if self.syncing is not None and self.syncing[0] == tag[1]:
                self.multicast([p for p in self.peers() if p != self.id], SyncRequest(self.syncing[1]))
                self.timer(2 * self.delta, tag)

    def on_inject(self, payload):
        kind, txs = payload
        if kind == "intra":
            for tx in txs:
                if tx.id not in self.committed_intra:
                    self.mempool.setdefault(tx.id, tx)

    # -- proposing ---------------------------------------------------------

    def try_propose(self):
        if not self.wants_propose or not self.is_leader() or self.syncing is not None:
            return
        parent, batches = self.mandate()
        if self.outstanding is not None and self.outstanding not in self.certs:
            ob = self.blocks.get(self.outstanding)
            if ob is not None and ob.parent_hash == parent and ob.header.view == self.view:
                self.wants_propose = False
                return
        if not self.batches_ready(batches):
            return  # deferred until the downloads finish
        self.wants_propose = False
        pb = self.blocks[parent]
        pstate = self.post_state[parent]
        branch = self.branch_intra(parent)
        intra = []
        for tid, tx in self.mempool.items():
            if len(intra) >= self.max_intra:
                break
            if tid not in branch and tid not in self.committed_intra:
                intra.append(tx)
        block = self._build(pb, pstate, batches, tuple(intra))
        blocks = [block]
        if "equivocate_proposals" in self.byz:
            alt = self._build(pb, pstate, batches, tuple(intra[: len(intra) // 2]))
            if alt.hash != block.hash:
                blocks.append(alt)
        self.outstanding = block.hash
        vcc = self.vccs.get(self.view)
        peers = self.peers()
        if len(blocks) == 1:
            self.multicast(peers, WorkerPropose(block, vcc))
        else:
            half = (len(peers) + 1) // 2
            self.multicast(peers[:half], WorkerPropose(blocks[0], vcc))
            self.multicast(peers[half:], WorkerPropose(blocks[1], vcc))

    def _build(self, pb, pstate, batches, intra):
        cross = tuple(c for _, cs in batches for c in cs)
        bh = body_hash(cross, intra)
        post, res, ires = execute_block(self.ctx, self.shard, pstate, batches, intra, self.foreign_of,
                                        (pstate.digest, bh, self.shard))
        hdr = WorkerHeader(self.shard, pb.hash, pb.height + 1, self.ref.height, post.digest, bh, self.view)
        block = WorkerBlock(hdr, cross, intra)
        self.blocks[block.hash] = block
        self.post_state[block.hash] = post
        self.results[block.hash] = res
        return block

    # -- voting ------------------------------------------------------------

    def validate_and_vote(self, block: WorkerBlock, proposer):
        """Signature, Reject(reason) or Defer(reason) for ``block``."""
        hdr = block.header
        me = self.shard
        if hdr.shard != me:
            return Reject(BAD_PARENT)
        if hdr.view != self.view:
            return Reject(WRONG_VIEW)
        if proposer != self.leader(hdr.view):
            return Reject(WRONG_LEADER)
        if hdr.ref_height > self.ref.height:
            return Defer(STALE_REF)
        parent = self.blocks.get(hdr.parent_hash)
        if hdr.parent_hash == self.committed:
            base = True
        elif self.tip is not None and hdr.parent_hash == self.tip:
            base = False
        else:
            if parent is not None and parent.height <= self.committed_height:
                return Reject(BAD_PARENT)
            return Defer(BAD_PARENT)  # parent may still become our certified tip
        if hdr.height != parent.height + 1:
            return Reject(BAD_PARENT)
        if hdr.ref_height < parent.ref_height:
            return Reject(STALE_REF)
        if base:
            s = self.ref.last_commit[me].included_at
            batches = self.ref.relevant_batches(me, s, hdr.ref_height)
        else:
            if self.ref.relevant_ctxs(me, parent.ref_height + 1, hdr.ref_height):
                return Reject(BAD_CTX_LIST)
            batches = []
        mandated = [c.id for _, cs in batches for c in cs]
        if [c.id for c in block.cross_txs] != mandated:
            return Reject(BAD_CTX_LIST)
        branch = self.branch_intra(hdr.parent_hash)
        seen = set()
        for tx in block.intra_txs:
            if getattr(tx, "shard", None) != me or tx.id in seen or tx.id in branch or tx.id in self.committed_intra:
                return Reject(BAD_STATE)
            seen.add(tx.id)
        if body_hash(block.cross_txs, block.intra_txs) != hdr.body_hash:
            return Reject(BAD_STATE)
        prev = self.voted.get((hdr.view, hdr.height))
        if prev is not None and prev != block.hash:
            if not (base and self.doomed(prev)):
                return Reject(EQUIVOCATION)
        if not self.batches_ready(batches):
            return Defer(MISSING_DATA)
        pstate = self.post_state[hdr.parent_hash]
        post, res, _ = execute_block(self.ctx, me, pstate, batches, block.intra_txs, self.foreign_of,
                                     (pstate.digest, hdr.body_hash, me))
        if post.digest != hdr.state_digest:
            return Reject(BAD_STATE)
        self.blocks[block.hash] = block
        self.post_state[block.hash] = post
        self.results[block.hash] = res
        self.voted[(hdr.view, hdr.height)] = block.hash
        return self.ctx.keyring.sign(self.id, block.hash)

    def on_WorkerPropose(self, sender, msg: WorkerPropose):
        if msg.vcc is not None:
            self._on_vcc(msg.vcc)
        self._consider(sender, msg.block)

    def _consider(self, sender, block):
        if "vote_conflicting" in self.byz:
            self.blocks.setdefault(block.hash, block)
            self.send(sender, WorkerVote(block.hash, self.ctx.keyring.sign(self.id, block.hash)))
            return
        res = self.validate_and_vote(block, sender)
        if isinstance(res, Defer):
            self.deferred[block.hash] = (sender, block)
        elif isinstance(res, Reject):
            self.deferred.pop(block.hash, None)
            self.observe("vote_reject", shard=self.shard, replica=str(self.id), reason=res.reason,
                         height=block.height, time=self.now)
        else:
            self.deferred.pop(block.hash, None)
            self.send(sender, WorkerVote(block.hash, res))

    def _retry_deferred(self):
        if not self.deferred:
            return
        for bh, (sender, block) in list(self.deferred.items()):
            if block.header.view < self.view or block.height <= self.committed_height:
                del self.deferred[bh]
                continue
            if bh in self.deferred:
                self._consider(sender, block)

    def on_WorkerVote(self, sender, msg: WorkerVote):
        sig = msg.sig
        if sig.signer != sender or sender.shard != self.shard or msg.block_hash in self.certs:
            return
        if msg.block_hash not in self.blocks or not self.ctx.keyring.verify(sig, msg.block_hash):
            return
        votes = self.votes[msg.block_hash]
        votes[sender] = sig
        if len(votes) >= self.f + 1:
            cert = Certificate(msg.block_hash, frozenset(votes.values()))
            self.votes.pop(msg.block_hash, None)
            self.multicast([p for p in self.peers() if p != self.id], WorkerCertified(msg.block_hash, cert))
            self._certified(msg.block_hash, cert, leader=True)

    def on_WorkerCertified(self, sender, msg: WorkerCertified):
        if msg.block_hash in self.certs:
            return
        cert = msg.cert
        if cert.block_hash != msg.block_hash or not validate_certificate(cert, self.ctx.keyring, self.shard, self.f + 1):
            return
        self._certified(msg.block_hash, cert)

    def _certified(self, bh: Hash, cert: Certificate, leader: bool = False):
        self.certs[bh] = cert
        block = self.blocks.get(bh)
        if leader and block is not None:
            self.observe("worker_certified", shard=self.shard, height=block.height, hash=bh.hex(),
                         parent=block.parent_hash.hex(), ref_height=block.ref_height, time=self.now,
                         ctxs=[c.id.hex() for c in block.cross_txs], intra=[t.id.hex() for t in block.intra_txs])
        if block is None or bh not in self.post_state:
            return
        if self.tip is None:
            if block.parent_hash == self.committed:
                self.tip = bh
        elif block.parent_hash == self.tip:
            self.tip = bh
        elif block.parent_hash == self.committed and self.doomed(self.tip):
            self.tip = bh
        if leader:
            self._submit(bh)
            self.try_propose()
        self._retry_deferred()

    def _submit(self, bh: Hash):
        hashes, headers, certs = [], [], []
        h = bh
        while h != self.committed:
            b = self.blocks.get(h)
            c = self.certs.get(h)
            if b is None or c is None or b.height <= self.committed_height:
                return
            hashes.append(h)
            headers.append(b.header)
            certs.append(c)
            h = b.parent_hash
        if not hashes:
            return
        hashes.reverse()
        headers.reverse()
        certs.reverse()
        last = headers[-1]
        com = BlockCommitment(self.shard, last.state_digest, tuple(hashes), last.ref_height, tuple(certs), tuple(headers))
        self.observe("commit_submit", shard=self.shard, height=last.height, hash=bh.hex(),
                     ref_height=last.ref_height, time=self.now)
        self.multicast(self.ctx.config.replicas(REFERENCE_SHARD), CommitmentSubmit(com))

    # -- reference chain ---------------------------------------------------

    def on_RefBlockMsg(self, sender, msg: RefBlockMsg):
        block = msg.block
        if block.height <= self.ref.height or block.height in self.ref_buffer:
            return
        if not check_finality(block, msg.cert, self.ctx.keyring, self.f):
            return
        self.ref_buffer[block.height] = (block, msg.cert)
        progressed = False
        while self.ref.height + 1 in self.ref_buffer:
            b, _ = self.ref_buffer.pop(self.ref.height + 1)
            if b.parent_hash != self.ref.tip:
                break
            self._apply_ref(b)
            progressed = True
        if progressed:
            self._serve_pending()
            self._retry_deferred()
            self.try_propose()

    def _apply_ref(self, block):
        self.ref.apply(block)
        me = self.shard
        own = next((c for c in block.commitments if c.shard == me), None)
        if own is not None:
            self._arm_blame()
            self._adopt_commit(own)
        elif self.blame_expired:
            self._blame()
        if "false_blame" in self.byz:
            self._blame()
        for req in plan_requests(block, me, self.ctx.partition):
            digest = self.ref.digest_at(req.target, req.ref_height)
            self.data.expect(block.height, req.target, req.keys, digest, self.now)
            self._request(req)
        if any(me in c.shards for c in block.cross_txs) and self.data.complete(block.height):
            self.data.finished.setdefault(block.height, self.now)
        if self.data.needed.get(block.height):
            self.timer(2 * self.delta, ("data", block.height))

    def _adopt_commit(self, com):
        # commitments are applied strictly in order; a later one never skips a pending one
        self.pending_commits.append(com)
        while self.pending_commits:
            c = self.pending_commits[0]
            if not (all(h in self.blocks for h in c.hash_chain) and c.hash_chain[-1] in self.post_state):
                break
            self.pending_commits.pop(0)
            self._commit_local(c.hash_chain, c.headers)
        if not self.pending_commits:
            self.syncing = None
            return
        hashes = tuple(h for c in self.pending_commits for h in c.hash_chain)
        self.syncing = (hashes[-1], hashes, self.pending_commits[-1].headers[-1])
        self.multicast([p for p in self.peers() if p != self.id], SyncRequest(hashes))
        self.timer(2 * self.delta, ("sync", hashes[-1]))

    def _commit_local(self, hashes, headers):
        """Finalize a certified chain; bodies may be missing for blocks known only by header."""
        log = {}
        for h, hdr in zip(hashes, headers):
            self.final_log.append((hdr.height, h.hex()))
            b = self.blocks.get(h)
            for t in (b.intra_txs if b is not None else ()):
                self.committed_intra.add(t.id)
                self.mempool.pop(t.id, None)
            res = self.results.get(h)
            if res:
                for r in res:
                    log[r.tx_id.hex()] = result_digest(r)
        height = headers[-1].height
        if log:
            self.observe("ctx_exec", shard=self.shard, replica=str(self.id), height=height, results=log)
        last = hashes[-1]
        self.committed = last
        self.committed_height = height
        state = self.post_state.get(last)  # absent for an intermediate chain caught up by header
        if state is not None:
            self.states_by_digest[state.digest] = state
        if self.tip is not None and not self.descends(self.tip, last):
            self.tip = None
        if self.tip == last:
            self.tip = None
        s = self.ref.last_commit[self.shard].included_at
        for batch in [b for b in self.data.needed if b < s]:
            self.data.forget(batch)
        self._prune()

    def _prune(self):
        keep = self.committed_height - 2
        for h in [h for h, b in self.blocks.items() if b.height < keep]:
            del self.blocks[h]
            self.post_state.pop(h, None)
            self.results.pop(h, None)
            self.certs.pop(h, None)
        for k in [k for k in self.voted if k[1] < keep]:
            del self.voted[k]

    def on_SyncRequest(self, sender, msg: SyncRequest):
        # answer with whatever bodies survive pruning; the post-state of the last block is required
        if sender.shard != self.shard or msg.hashes[-1] not in self.post_state:
            return
        blocks = tuple(self.blocks[h] for h in msg.hashes if h in self.blocks)
        self.send(sender, SyncResponse(blocks, self.post_state[msg.hashes[-1]]))

    def on_SyncResponse(self, sender, msg: SyncResponse):
        if self.syncing is None:
            return
        last, hashes, header = self.syncing
        wanted = set(hashes)
        if any(b.hash not in wanted for b in msg.blocks) or msg.state.digest != header.state_digest:
            return
        for b in msg.blocks:
            self.blocks.setdefault(b.hash, b)
        self.post_state[last] = msg.state
        self.syncing = None
        pending, self.pending_commits = self.pending_commits, []
        for c in pending:
            self._commit_local(c.hash_chain, c.headers)
        self._retry_deferred()
        self.try_propose()

    # -- data exchange -----------------------------------------------------

    def _request(self, req: DataRequest):
        self.multicast(self.ctx.topology.chosen(self.id, req.target), req)

    def _rerequest(self, batch):
        need = self.data.needed.get(batch)
        if not need:
            return
        pending = self.data.outstanding(batch)
        for t in pending:
            keys, _ = need[t]
            self._request(DataRequest(self.shard, t, batch, keys))
        if pending:
            self.timer(2 * self.delta, ("data", batch))

    def on_DataRequest(self, sender, req: DataRequest):
        if "silent_cross_shard" in self.byz or req.target != self.shard:
            return
        if not self._answer(sender, req):
            self.pending_requests.append((sender, req))

    def _answer(self, sender, req) -> bool:
        if req.ref_height > self.ref.height:
            return False
        digest = self.ref.digest_at(self.shard, req.ref_height)
        resp = answer_request(self.states_by_digest, digest, req, "tamper_data_responses" in self.byz)
        if resp is None:
            return False
        self.send(sender, resp)
        return True

    def _serve_pending(self):
        if self.pending_requests:
            self.pending_requests = [(s, r) for s, r in self.pending_requests if not self._answer(s, r)]

    def on_DataResponse(self, sender, resp: DataResponse):
        batch = resp.ref_height
        if sender.shard != resp.target:
            return
        was = self.data.complete(batch)
        if self.data.offer(batch, resp.target, resp, self.now) and not was and self.data.complete(batch):
            self.observe("data_done", shard=self.shard, replica=str(self.id), ref_height=batch,
                         duration=self.now - self.data.started.get(batch, self.now), time=self.now)
            self._retry_deferred()
            self.try_propose()

    # -- blame / view change -----------------------------------------------

    def _blame(self):
        self.blame_expired = False
        sig = self.ctx.keyring.sign(self.id, blame_digest(self.shard, self.view))
        self.observe("blame", shard=self.shard, replica=str(self.id), view=self.view, time=self.now)
        self.multicast(self.peers(), BlameMsg(self.view, sig))

    def on_BlameMsg(self, sender, msg: BlameMsg):
        sig = msg.sig
        if sender.shard != self.shard or sig.signer != sender:
            return
        if not self.ctx.keyring.verify(sig, blame_digest(self.shard, msg.view)):
            return
        box = self.blames[msg.view]
        box[sender] = sig
        if len(box) >= self.f + 1 and msg.view >= self.view:
            vcc = ViewChangeCertificate(self.shard, msg.view, frozenset(box.values()))
            self._enter_view(msg.view + 1, vcc)

    def on_ViewChangeMsg(self, sender, msg: ViewChangeMsg):
        self._on_vcc(msg.vcc)

    def _on_vcc(self, vcc):
        if vcc.shard != self.shard or vcc.view < self.view or vcc.view + 1 <= self.view:
            return
        if validate_vcc(vcc, self.ctx.keyring, self.f):
            self._enter_view(vcc.view + 1, vcc)

    def _enter_view(self, view: int, vcc):
        if view <= self.view:
            return
        self.view = view
        self.vccs[view] = vcc
        self.outstanding = None
        self.observe("view_change", shard=self.shard, replica=str(self.id), view=view, time=self.now)
        new_leader = self.leader(view)
        if new_leader != self.id:
            self.send(new_leader, ViewChangeMsg(vcc))
        self._arm_blame()
