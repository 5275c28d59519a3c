import json
from pathlib import Path

from hypothesis import given, settings, strategies as st

from rivet.core import Instr, IntraShardTx, Key, PartitionMap, PayloadProgram
from rivet.state import (
    ABORTED, ASSERTION_FAILED, COMMITTED, DECLARED_SET_MISMATCH, EMPTY_DIGEST, ShardState, apply, digest_after,
    prove, verify_proof,
)

from conftest import make_transfer, transfer

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden.json").read_text())

keys = st.builds(Key, st.sampled_from(["a0", "a1", "a2", "a3"]), st.integers(0, 3))
states = st.dictionaries(keys, st.integers(-5, 5), max_size=12)


def test_empty_digest_golden():
    assert EMPTY_DIGEST.hex() == GOLDEN["empty_digest"]
    assert ShardState({Key("a0"): 0}).digest == EMPTY_DIGEST  # zeros are not stored


@given(states)
def test_digest_order_free(entries):
    a = ShardState(entries)
    b = ShardState(dict(reversed(list(entries.items()))))
    assert a.digest == b.digest == digest_after(a)


@given(states, keys)
def test_proof_verifies(entries, key):
    s = ShardState(entries)
    p = prove(s, key)
    assert p.value == s.get(key)
    assert verify_proof(p, s.digest)


@given(states, keys, st.integers(1, 3))
def test_tampered_proof_fails(entries, key, bump):
    s = ShardState(entries)
    p = prove(s, key)
    from dataclasses import replace
    assert not verify_proof(replace(p, value=p.value + bump), s.digest)


@given(states, keys)
def test_proof_against_other_digest_fails(entries, key):
    s = ShardState(entries)
    other = s.with_updates({key: s.get(key) + 1})
    assert not verify_proof(prove(s, key), other.digest)


def test_with_updates_is_persistent():
    s = ShardState({Key("a0"): 1})
    t = s.with_updates({Key("a0"): 2, Key("a1"): 3})
    assert s.get(Key("a0")) == 1 and t.get(Key("a0")) == 2 and t.get(Key("a1")) == 3
    assert t.with_updates({Key("a1"): 0}).digest == ShardState({Key("a0"): 2}).digest


def test_apply_transfer(pm2):
    a, b = Key("a0"), Key("b0")
    tx = make_transfer(a, b, 30, pm2)
    s1 = ShardState({a: 100})
    out = apply(s1, [tx], {b: 5}, 1, pm2)
    r = out.results[0]
    assert r.verdict == COMMITTED
    assert dict(r.writes) == {a: 70, b: 35}
    assert out.new_state.get(a) == 70 and out.new_state.get(b) == 0  # foreign write not persisted


def test_apply_assert_aborts(pm2):
    a, b = Key("a0"), Key("b0")
    tx = make_transfer(a, b, 30, pm2)
    out = apply(ShardState({a: 10}), [tx], {b: 0}, 1, pm2)
    assert (out.results[0].verdict, out.results[0].reason) == (ABORTED, ASSERTION_FAILED)
    assert out.new_state.digest == ShardState({a: 10}).digest


def test_declared_set_mismatch(pm2):
    a, a1 = Key("a0"), Key("a1")
    prog = PayloadProgram((Instr("LOAD", 0, a), Instr("STORE", 0, a1)))
    tx = IntraShardTx.create(1, {a}, {a}, prog, pm2)
    out = apply(ShardState({a: 4}), [tx], None, 1, pm2)
    assert out.results[0].reason == DECLARED_SET_MISMATCH


def test_sequential_local_reads(pm2):
    a0, a1 = Key("a0"), Key("a1")
    t1 = IntraShardTx.create(1, {a0, a1}, {a0, a1}, transfer(a0, a1, 5), pm2)
    t2 = IntraShardTx.create(1, {a0, a1}, {a0, a1}, transfer(a1, a0, 2), pm2, nonce=1)
    out = apply(ShardState({a0: 10}), [t1, t2], None, 1, pm2)
    assert out.new_state.get(a0) == 7 and out.new_state.get(a1) == 3


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from(["a0", "a1", "a2"]), st.sampled_from(["a0", "a1", "a2"]),
                          st.integers(0, 20)), max_size=8),
       st.dictionaries(st.sampled_from([Key("a0"), Key("a1"), Key("a2")]), st.integers(0, 30)))
def test_apply_deterministic(moves, init):
    pm = PartitionMap({"a0": 1, "a1": 1, "a2": 1}, 1)
    txs = [IntraShardTx.create(1, {Key(s), Key(d)}, {Key(s), Key(d)}, transfer(Key(s), Key(d), n), pm, nonce=i)
           for i, (s, d, n) in enumerate(moves)]
    s = ShardState(init)
    o1, o2 = apply(s, txs, None, 1, pm), apply(s, txs, None, 1, pm)
    assert o1.new_state.digest == o2.new_state.digest and o1.results == o2.results
    # balances are conserved
    assert sum(o1.new_state.entries.values()) == sum(s.entries.values())
