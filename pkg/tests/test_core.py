import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from rivet.codec import CodecError, decode, encode
from rivet.core import (
    LOCAL, ZERO_HASH, ConfigError, CrossShardTx, Hash, Instr, IntraShardTx, Key, Keyring, PartitionMap,
    PayloadProgram, ReplicaId, ShardConfig, WorkloadError, hash_of, involved_shards, validate_certificate,
)
from rivet.state import ShardState
from rivet import worker

from conftest import make_transfer, transfer

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden.json").read_text())

scalars = st.recursive(
    st.none() | st.booleans() | st.integers(-2**70, 2**70) | st.text(max_size=8) | st.binary(max_size=8),
    lambda inner: st.lists(inner, max_size=4).map(tuple) | st.frozensets(st.integers(0, 50), max_size=4),
    max_leaves=12,
)


@given(scalars)
def test_codec_round_trip(v):
    assert decode(encode(v)) == v


@given(scalars, scalars)
def test_codec_injective(a, b):
    if a != b:
        assert encode(a) != encode(b)


def test_codec_rejects_truncation():
    data = encode(("x", 1, (2, 3)))
    with pytest.raises(CodecError):
        decode(data[:-1])


def test_hash_of_field_equal_objects():
    k1, k2 = Key("a", 3), Key("a", 3)
    assert hash_of(k1) == hash_of(k2)
    assert hash_of(Key("a", 3)) != hash_of(Key("a", 4))


def test_hash_of_sets_order_free():
    assert hash_of(frozenset([Key("x"), Key("y")])) == hash_of(frozenset([Key("y"), Key("x")]))


def test_flipped_tx_changes_block_hash(pm2):
    t1 = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    t2 = make_transfer(Key("a0"), Key("b0"), 1, pm2, nonce=1)
    g = worker.genesis_block(1, ShardState().digest)
    assert worker.body_hash((t1,), ()) != worker.body_hash((t2,), ())
    assert g.hash == worker.genesis_block(1, ShardState().digest).hash


def test_golden_genesis_digest():
    state = ShardState({Key("a0", 0): 1000, Key("a1", 1): 7})
    assert state.digest.hex() == GOLDEN["state_digest"]
    assert worker.genesis_block(1, state.digest).hash.hex() == GOLDEN["genesis_worker_shard1"]


def test_hash_type_checks_length():
    with pytest.raises(ValueError):
        Hash(b"short")
    assert Hash.from_hex(ZERO_HASH.hex()) == ZERO_HASH


def test_sign_verify():
    sc = ShardConfig.rivet(1, 2)
    kr = Keyring(sc, seed=1)
    d = hash_of("m")
    sig = kr.sign(ReplicaId(1, 0), d)
    assert kr.verify(sig, d)
    assert not kr.verify(sig, hash_of("other"))
    # a different keyring (other seed) does not accept it
    assert not Keyring(sc, seed=2).verify(sig, d)


def test_sign_unknown_replica_rejected():
    kr = Keyring(ShardConfig.rivet(1, 2))
    with pytest.raises(ConfigError):
        kr.sign(ReplicaId(1, 3), ZERO_HASH)


def test_certificate_quorum_and_shard():
    sc = ShardConfig.rivet(1, 2)
    kr = Keyring(sc)
    h = hash_of("block")
    cert = kr.certify(h, [ReplicaId(1, 0), ReplicaId(1, 1)])
    assert validate_certificate(cert, kr, 1, 2)
    assert not validate_certificate(cert, kr, 1, 3)
    assert not validate_certificate(cert, kr, 2, 2)
    mixed = kr.certify(h, [ReplicaId(1, 0), ReplicaId(2, 1)])
    assert not validate_certificate(mixed, kr, 1, 2)
    # duplicate signer counts once
    one = kr.certify(h, [ReplicaId(1, 0)])
    assert not validate_certificate(one, kr, 1, 2)


def test_shard_sizes():
    r, t = ShardConfig.rivet(3, 6), ShardConfig.tpc(3, 6)
    assert (r.worker_size, r.reference_size) == (7, 10)
    assert (t.worker_size, t.reference_size) == (10, 10)
    assert len(r.all_replicas()) == 10 + 6 * 7
    with pytest.raises(ConfigError):
        ShardConfig(1, 2, 5, 4)


def test_involved_shards(pm2):
    ctx = CrossShardTx.create({Key("a0"), Key("b1")}, {Key("a0")}, transfer(Key("a0"), Key("a0"), 0), pm2)
    assert involved_shards(ctx, pm2) == {1, 2} == ctx.shards


def test_involved_shards_unmapped_account(pm2):
    ctx = make_transfer(Key("a0"), Key("b0"), 1, pm2)
    other = PartitionMap({"a0": 1}, 2)
    with pytest.raises(WorkloadError):
        involved_shards(ctx, other)


def test_ctx_needs_two_shards(pm2):
    with pytest.raises(WorkloadError):
        make_transfer(Key("a0"), Key("a1"), 1, pm2)


def test_ctx_must_be_global(pm2):
    prog = transfer(Key("a0"), Key("b0"), 1, tag=LOCAL)
    with pytest.raises(WorkloadError):
        CrossShardTx.create({Key("a0"), Key("b0")}, {Key("a0"), Key("b0")}, prog, pm2)


def test_intra_tx_single_home(pm2):
    prog = transfer(Key("a0"), Key("a1"), 1)
    tx = IntraShardTx.create(1, {Key("a0"), Key("a1")}, {Key("a0"), Key("a1")}, prog, pm2)
    assert tx.keys == {Key("a0"), Key("a1")}
    with pytest.raises(WorkloadError):
        IntraShardTx.create(1, {Key("b0")}, set(), prog, pm2)


def test_unknown_instruction():
    with pytest.raises(WorkloadError):
        PayloadProgram((Instr("JUMP"),))


def test_partition_map_range():
    with pytest.raises(WorkloadError):
        PartitionMap({"a": 3}, 2)
