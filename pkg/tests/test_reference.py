from rivet.core import ZERO_HASH, Key, Keyring, ReplicaId, ShardConfig
from rivet.reference import (
    BAD_CERTIFICATE, BROKEN_CHAIN, STALE_COMMITMENT, GENESIS_REF, LockTable, RefChainState, ReferenceBlock,
    build_proposal, validate_block, validate_commitment, validate_ctx,
)
from rivet.worker import EMPTY_BODY, BlockCommitment, WorkerHeader, genesis_block

from conftest import make_transfer

F = 1


def _setup(pm):
    cfg = ShardConfig.rivet(F, pm.k)
    kr = Keyring(cfg, seed=0)
    gen = {a: genesis_block(a, ZERO_HASH) for a in range(1, pm.k + 1)}
    return kr, gen, RefChainState(pm.k, pm, gen)


def _commit(kr, shard, parent, start_h, n, ref_height=0, signers=None, digest=ZERO_HASH):
    hdrs, certs = [], []
    signers = signers or [ReplicaId(shard, i) for i in range(F + 1)]
    for i in range(n):
        h = WorkerHeader(shard, parent, start_h + i, ref_height, digest, EMPTY_BODY, 0)
        hdrs.append(h)
        certs.append(kr.certify(h.hash, signers))
        parent = h.hash
    return BlockCommitment(shard, digest, tuple(h.hash for h in hdrs), ref_height, tuple(certs), tuple(hdrs))


def _next(chain, coms=(), ctxs=()):
    return ReferenceBlock(chain.tip, chain.height + 1, tuple(coms), tuple(ctxs))


def test_commitment_accepted(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[1].hash, 1, 2)
    assert validate_commitment(chain, com, kr, F)


def test_commitment_too_few_signers(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[1].hash, 1, 1, signers=[ReplicaId(1, 0)])
    assert validate_commitment(chain, com, kr, F).reason == BAD_CERTIFICATE


def test_commitment_foreign_signers(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[1].hash, 1, 1, signers=[ReplicaId(2, 0), ReplicaId(2, 1)])
    assert validate_commitment(chain, com, kr, F).reason == BAD_CERTIFICATE


def test_commitment_wrong_parent(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[2].hash, 1, 1)
    assert validate_commitment(chain, com, kr, F).reason == BROKEN_CHAIN


def test_commitment_height_skip(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[1].hash, 2, 1)
    assert validate_commitment(chain, com, kr, F).reason == BROKEN_CHAIN


def test_commitment_future_ref_height(pm2):
    kr, gen, chain = _setup(pm2)
    com = _commit(kr, 1, gen[1].hash, 1, 1, ref_height=3)
    assert validate_commitment(chain, com, kr, F).reason == BROKEN_CHAIN


def test_stale_commitment(pm2):
    kr, gen, chain = _setup(pm2)
    t = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    chain.apply(_next(chain, ctxs=[t]))
    com = _commit(kr, 1, gen[1].hash, 1, 1, ref_height=0)
    assert validate_commitment(chain, com, kr, F).reason == STALE_COMMITMENT
    fresh = _commit(kr, 1, gen[1].hash, 1, 1, ref_height=1)
    assert validate_commitment(chain, fresh, kr, F)


def test_commitment_must_extend_last_committed(pm2):
    kr, gen, chain = _setup(pm2)
    c1 = _commit(kr, 1, gen[1].hash, 1, 2)
    chain.apply(_next(chain, coms=[c1]))
    assert validate_commitment(chain, c1, kr, F).reason == BROKEN_CHAIN  # replay
    c2 = _commit(kr, 1, c1.hash_chain[-1], 3, 1)
    assert validate_commitment(chain, c2, kr, F)


def test_read_of_pending_write_rejected(pm2):
    locks = LockTable(2)
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    locks.add(t1, pm2)
    t2 = make_transfer(Key("a1"), Key("b0"), 1, pm2, nonce=1)
    t3 = make_transfer(Key("a1"), Key("b1"), 1, pm2, nonce=2)
    assert not validate_ctx(locks, {}, t2, pm2)
    assert validate_ctx(locks, {}, t3, pm2)
    assert validate_ctx(LockTable(2), {}, t2, pm2)


def test_cleared_shard(pm2):
    locks = LockTable(2)
    locks.add(make_transfer(Key("a0"), Key("b0"), 1, pm2), pm2)
    t = make_transfer(Key("a1"), Key("b0"), 1, pm2, nonce=1)
    assert validate_ctx(locks, {}, t, pm2, cleared=frozenset({2}))
    assert not validate_ctx(locks, {}, t, pm2, cleared=frozenset({1}))


def test_proposal_internal_conflict(pm2):
    writes = {}
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    t2 = make_transfer(Key("a0"), Key("b1"), 1, pm2, nonce=1)
    assert validate_ctx(LockTable(2), writes, t1, pm2)
    assert not validate_ctx(LockTable(2), writes, t2, pm2)


def test_build_proposal_and_validate(pm2):
    kr, gen, chain = _setup(pm2)
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    t2 = make_transfer(Key("a0"), Key("b1"), 1, pm2, nonce=1)  # conflicts with t1
    t3 = make_transfer(Key("a2"), Key("b2"), 1, pm2, nonce=2)
    short = _commit(kr, 1, gen[1].hash, 1, 1)
    long = _commit(kr, 1, gen[1].hash, 1, 2)
    coms, ctxs = build_proposal([t1, t2, t3], chain, [short, long], kr, F, pm2)
    assert coms == (long,)
    assert ctxs == (t1, t3)
    block = _next(chain, coms, ctxs)
    assert validate_block(chain, block, kr, F, pm2)
    chain.apply(block)
    # t2 still blocked until shard 1 commits a block with ref_height >= 1
    assert build_proposal([t2], chain, [], kr, F, pm2)[1] == ()
    c = _commit(kr, 1, long.hash_chain[-1], 3, 1, ref_height=1)
    coms, ctxs = build_proposal([t1, t2], chain, [c], kr, F, pm2)
    assert coms == (c,) and ctxs == (t2,)  # t1 already finalized


def test_validate_block_rejections(pm2):
    kr, gen, chain = _setup(pm2)
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    t2 = make_transfer(Key("a0"), Key("b1"), 1, pm2, nonce=1)
    assert validate_block(chain, ReferenceBlock(ZERO_HASH, 1, (), ()), kr, F, pm2).reason == "bad_parent"
    assert validate_block(chain, _next(chain, ctxs=[t1, t2]), kr, F, pm2).reason == "lock_conflict"
    assert validate_block(chain, _next(chain, ctxs=[t1, t1]), kr, F, pm2).reason == "bad_ctx"
    assert validate_block(chain, _next(chain, ctxs=[t1]), kr, F, pm2, max_ctx=0).reason == "over_capacity"
    c = _commit(kr, 1, gen[1].hash, 1, 1)
    assert validate_block(chain, _next(chain, coms=[c, c]), kr, F, pm2).reason == "duplicate_commitment"
    bad = _commit(kr, 1, gen[1].hash, 1, 1, signers=[ReplicaId(1, 0)])
    assert validate_block(chain, _next(chain, coms=[bad]), kr, F, pm2).reason == BAD_CERTIFICATE


def test_chain_state_bookkeeping(pm2):
    kr, gen, chain = _setup(pm2)
    assert chain.tip == GENESIS_REF.hash
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    chain.apply(_next(chain, ctxs=[t1]))
    assert chain.relevant_ctxs(1, 1, 1) == [t1] and chain.relevant_ctxs(2, 1, 1) == [t1]
    assert chain.last_ctx == {1: 1, 2: 1}
    c = _commit(kr, 2, gen[2].hash, 1, 1, ref_height=1, digest=ZERO_HASH)
    chain.apply(_next(chain, coms=[c]))
    assert chain.last_commit[2].included_at == 2
    assert chain.locks.W[2] == set() and Key("a0") in chain.locks.W[1]
    assert chain.digest_at(2, 1) == gen[2].header.state_digest
