"""SimBFT: a compact Tendermint-style ordered-finality engine.

Used by the reference shard, the 2PC coordinator and the 2PC worker shards.
Per height the engine runs rounds of propose / prevote / precommit among
``3f+1`` replicas. A replica locks on a polka (2f+1 prevotes) and decides on
2f+1 precommits for the same block, which together form the commit
certificate. The proposer of (height, round) is ``(height + round) mod n``.

The embedding replica supplies an *app* with four hooks::

    bft_propose(height)            -> block | None    (None: not ready yet)
    bft_validate(block, height)    -> True | False | None (None: undecidable yet)
    bft_decide(block, cert, height)
    bft_alt_block(block)           -> block            (only for equivocation faults)

Blocks must expose ``.hash``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .codec import record
from .core import Certificate, Hash, Signature, hash_of, validate_certificate


@record("BftProposal")
@dataclass(frozen=True)
class BftProposal:
    shard: int
    height: int
    round: int
    block: object
    pol_round: int


@record("BftVote")
@dataclass(frozen=True)
class BftVote:
    shard: int
    height: int
    round: int
    phase: str  # prevote | precommit
    value: Hash | None
    sig: Signature | None


@record("BftFetch")
@dataclass(frozen=True)
class BftFetch:
    shard: int
    height: int
    value: Hash


@record("BftFinalize")
@dataclass(frozen=True)
class BftFinalize:
    shard: int
    height: int
    block: object
    cert: Certificate


def commit_digest(block_hash: Hash) -> Hash:
    return hash_of(("commit", block_hash))


class SimBFT:
    def __init__(self, host, app, shard: int, schedule, tau: float):
        self.host = host
        self.app = app
        self.shard = shard
        self.members = host.ctx.config.replicas(shard)
        self.n = len(self.members)
        self.f = host.ctx.config.f
        self.q = 2 * self.f + 1
        self.schedule = schedule  # height -> earliest proposal time
        self.tau = tau
        self.height = 1
        self.history: dict[int, tuple] = {}  # height -> (block, cert)
        self.decided_at = 0.0  # local time of the latest decision
        self.conflicting = "vote_conflicting" in host.byz
        self.equivocate = "equivocate_proposals" in host.byz
        self.future = defaultdict(list)
        self._reset_height()

    # -- bookkeeping -------------------------------------------------------

    def _reset_height(self):
        self.round = 0
        self.step = "propose"
        self.locked = (-1, None)
        self.valid = (-1, None)
        self.blocks: dict[Hash, object] = {}
        self.proposals: dict[int, tuple] = {}
        self.prevotes = defaultdict(lambda: defaultdict(set))
        self.precommits = defaultdict(lambda: defaultdict(set))
        self.commit_sigs = defaultdict(dict)
        self.round_senders = defaultdict(set)
        self.validity: dict[Hash, bool] = {}
        self.fetched: set = set()
        self.pending_propose = False

    def proposer(self, height: int, rnd: int):
        return self.members[(height + rnd) % self.n]

    def _bcast(self, msg):
        self.host.multicast(self.members, msg)

    def _validate(self, block):
        h = block.hash
        v = self.validity.get(h)
        if v is None:
            v = self.app.bft_validate(block, self.height)
            if v is not None:
                self.validity[h] = v
        return v

    # -- entry points ------------------------------------------------------

    def start(self):
        self._enter_round(0)

    def poke(self):
        """App state changed (new data, new ref block...): retry stalled steps."""
        if self.pending_propose:
            self._propose()
        self._try_prevote()
        self._check_votes()

    def on_timer(self, tag) -> bool:
        kind = tag[0]
        if kind == "bft-propose":
            if tag[1:] == (self.height, self.round) and self.step == "propose":
                self._propose()
            return True
        if kind == "bft-round":
            if tag[1:] == (self.height, self.round):
                r = self.round
                if self.step == "propose":
                    self._vote("prevote", None)
                if self.step in ("propose", "prevote"):
                    self._vote("precommit", None)
                self._enter_round(r + 1)
            return True
        return False

    def on_message(self, sender, msg):
        if sender.shard != self.shard:
            return
        if msg.height > self.height:
            self.future[msg.height].append((sender, msg))
            return
        if isinstance(msg, BftFetch):
            self._on_fetch(sender, msg)
            return
        if msg.height < self.height:
            return
        if isinstance(msg, BftProposal):
            self._on_proposal(sender, msg)
        elif isinstance(msg, BftVote):
            self._on_vote(sender, msg)
        elif isinstance(msg, BftFinalize):
            self._on_finalize(sender, msg)

    # -- rounds ------------------------------------------------------------

    def _enter_round(self, r: int):
        now = self.host.now
        self.round = r
        self.step = "propose"
        self.pending_propose = False
        start = max(now, self.schedule(self.height)) if r == 0 else now
        self.host.timer(start - now + self.tau * (1 + 0.5 * r), ("bft-round", self.height, r))
        if self.proposer(self.height, r) == self.host.id:
            if start > now:
                self.host.timer(start - now, ("bft-propose", self.height, r))
            else:
                self._propose()
        self._try_prevote()
        self._check_votes()

    def _propose(self):
        self.pending_propose = False
        vr, vb = self.valid
        if vb is not None:
            block, pol = vb, vr
        else:
            block, pol = self.app.bft_propose(self.height), -1
            if block is None:
                self.pending_propose = True
                return
        self.host.observe("bft_propose", shard=self.shard, height=self.height, round=self.round,
                          hash=block.hash.hex(), replica=str(self.host.id), time=self.host.now)
        if self.equivocate:
            alt = self.app.bft_alt_block(block)
            half = self.n // 2
            self.host.multicast(self.members[:half], BftProposal(self.shard, self.height, self.round, block, pol))
            self.host.multicast(self.members[half:], BftProposal(self.shard, self.height, self.round, alt, pol))
        else:
            self._bcast(BftProposal(self.shard, self.height, self.round, block, pol))

    def _on_proposal(self, sender, msg: BftProposal):
        if sender != self.proposer(msg.height, msg.round):
            return
        block = msg.block
        self.blocks.setdefault(block.hash, block)
        if self.conflicting:
            # signs whatever it sees, in every phase
            self._vote("prevote", block.hash, rnd=msg.round)
            self._vote("precommit", block.hash, rnd=msg.round)
        if msg.round not in self.proposals:
            self.proposals[msg.round] = (block, msg.pol_round)
        self._try_prevote()
        self._check_votes()

    def _try_prevote(self):
        if self.step != "propose" or self.conflicting:
            return
        p = self.proposals.get(self.round)
        if p is None:
            return
        block, vr = p
        bh = block.hash
        ok = self._validate(block)
        if ok is None:
            return
        lr, lh = self.locked
        if vr == -1:
            ok = ok and (lr == -1 or lh == bh)
        elif 0 <= vr < self.round:
            if len(self.prevotes[vr].get(bh, ())) < self.q:
                return
            ok = ok and (lr <= vr or lh == bh)
        else:
            ok = False
        self._vote("prevote", bh if ok else None)
        self.step = "prevote"

    def _vote(self, phase: str, value, rnd=None):
        rnd = self.round if rnd is None else rnd
        sig = None
        if phase == "precommit" and value is not None:
            sig = self.host.ctx.keyring.sign(self.host.id, commit_digest(value))
        self._bcast(BftVote(self.shard, self.height, rnd, phase, value, sig))

    def _on_vote(self, sender, msg: BftVote):
        if sender.shard != self.shard:
            return
        if msg.phase == "prevote":
            self.prevotes[msg.round][msg.value].add(sender)
        else:
            if msg.value is not None:
                sig = msg.sig
                if sig is None or sig.signer != sender or not self.host.ctx.keyring.verify(sig, commit_digest(msg.value)):
                    return
                self.commit_sigs[msg.value][sender] = sig
            self.precommits[msg.round][msg.value].add(sender)
        rs = self.round_senders[msg.round]
        rs.add(sender)
        if msg.round > self.round and len(rs) >= self.f + 1:
            self._enter_round(msg.round)
            return
        if msg.phase == "prevote" and self.step == "propose":
            self._try_prevote()
        self._check_votes()

    def _check_votes(self):
        for value, sigs in list(self.commit_sigs.items()):
            if len(sigs) >= self.q:
                if value in self.blocks:
                    self._decide(value)
                    return
                if value not in self.fetched:
                    self.fetched.add(value)
                    self.host.multicast(sorted(sigs), BftFetch(self.shard, self.height, value))
        if self.conflicting:
            return
        r = self.round
        if self.step == "propose":
            return
        for value, voters in self.prevotes[r].items():
            if len(voters) < self.q:
                continue
            if value is None:
                if self.step == "prevote":
                    self._vote("precommit", None)
                    self.step = "precommit"
                continue
            block = self.blocks.get(value)
            if block is None or not self._validate(block):
                continue
            if self.step == "prevote":
                self.locked = (r, value)
                self._vote("precommit", value)
                self.step = "precommit"
            self.valid = (r, block)

    def _on_fetch(self, sender, msg: BftFetch):
        entry = self.history.get(msg.height)
        if entry is not None and entry[0].hash == msg.value:
            self.host.send(sender, BftFinalize(self.shard, msg.height, entry[0], entry[1]))

    def _on_finalize(self, sender, msg: BftFinalize):
        block, cert = msg.block, msg.cert
        if block.hash != cert.block_hash:
            return
        if not validate_certificate(cert, self.host.ctx.keyring, self.shard, self.q, commit_digest(cert.block_hash)):
            return
        self.blocks.setdefault(block.hash, block)
        for sig in cert.signatures:
            self.commit_sigs[block.hash][sig.signer] = sig
        self._check_votes()

    def _decide(self, value: Hash):
        block = self.blocks[value]
        sigs = self.commit_sigs[value]
        cert = Certificate(value, frozenset(sigs[s] for s in sorted(sigs)[: max(self.q, len(sigs))]))
        h = self.height
        self.history[h] = (block, cert)
        self.decided_at = self.host.now
        self.host.observe("bft_decide", shard=self.shard, height=h, round=self.round,
                          hash=value.hex(), replica=str(self.host.id), time=self.host.now)
        self.app.bft_decide(block, cert, h)
        self.height = h + 1
        self._reset_height()
        self._enter_round(0)
        for sender, msg in self.future.pop(self.height, []):
            self.on_message(sender, msg)
