"""Merkle-committed shard state, inclusion proofs and the transition function.

Tree layout: leaves are the stored entries sorted by key; the leaf level is
padded with ``EMPTY_NODE`` up to a power of two. Node hashes are domain
separated::

    leaf      = H(0x00 || enc(key) || enc(value))
    internal  = H(0x01 || left || right)
    EMPTY     = H(0x02)
    digest    = H(0x03 || u64(leaf_count) || top)

Entries with value 0 are never stored, so an absent key reads as 0 and is
proven by exhibiting its two neighbouring leaves (or the single boundary leaf).
"""

from __future__ import annotations

import bisect
import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

from .codec import encode, record
from .core import CrossShardTx, Hash, IntraShardTx, Key, PartitionMap, sha256

INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

COMMITTED, ABORTED = "committed", "aborted"
ASSERTION_FAILED, DECLARED_SET_MISMATCH = "assertion_failed", "declared_set_mismatch"

EMPTY_NODE = sha256(b"\x02")


class ExecutionError(RuntimeError):
    """Protocol bug: execution asked for data the caller did not supply."""


@lru_cache(maxsize=1 << 16)
def _key_bytes(key: Key) -> bytes:
    return encode(key)


def leaf_hash(key: Key, value: int) -> Hash:
    return Hash(hashlib.sha256(b"\x00" + _key_bytes(key) + encode(value)).digest())


def _node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def _root(leaf_count: int, top: bytes) -> Hash:
    return Hash(hashlib.sha256(b"\x03" + leaf_count.to_bytes(8, "big") + top).digest())


def _depth(n: int) -> int:
    return max(n - 1, 0).bit_length()


@record("LeafWitness")
@dataclass(frozen=True)
class LeafWitness:
    key: Key
    value: int
    index: int
    path: tuple  # ((sibling: Hash, sibling_is_left: bool), ...) from leaf to top


@record("InclusionProof")
@dataclass(frozen=True)
class InclusionProof:
    key: Key
    value: int
    leaf_count: int
    witnesses: tuple


class ShardState:
    """Immutable key -> int map with a lazily computed Merkle digest."""

    __slots__ = ("_entries", "_keys", "_levels", "_digest")

    def __init__(self, entries: Mapping[Key, int] | None = None):
        self._entries = {k: v for k, v in (entries or {}).items() if v != 0}
        self._keys = None
        self._levels = None
        self._digest = None

    @property
    def entries(self) -> Mapping[Key, int]:
        return self._entries

    def get(self, key: Key) -> int:
        return self._entries.get(key, 0)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return isinstance(other, ShardState) and self._entries == other._entries

    def __hash__(self):
        return hash(self.digest)

    def __repr__(self):
        return f"ShardState({len(self._entries)} entries, {self.digest.hex()[:12]})"

    def with_updates(self, updates: Mapping[Key, int]) -> "ShardState":
        if not updates:
            return self
        merged = dict(self._entries)
        for k, v in updates.items():
            if v == 0:
                merged.pop(k, None)
            else:
                merged[k] = v
        return ShardState(merged)

    def sorted_keys(self) -> list[Key]:
        if self._keys is None:
            self._keys = sorted(self._entries)
        return self._keys

    def _tree(self) -> list[list[bytes]]:
        if self._levels is None:
            keys = self.sorted_keys()
            level = [leaf_hash(k, self._entries[k]) for k in keys]
            width = 1 << _depth(len(level))
            level += [EMPTY_NODE] * (width - len(level))
            levels = [level]
            while len(level) > 1:
                level = [_node(level[i], level[i + 1]) for i in range(0, len(level), 2)]
                levels.append(level)
            self._levels = levels
        return self._levels

    @property
    def digest(self) -> Hash:
        if self._digest is None:
            self._digest = _root(len(self._entries), self._tree()[-1][0])
        return self._digest

    def _witness(self, index: int) -> LeafWitness:
        levels = self._tree()
        key = self.sorted_keys()[index]
        path, i = [], index
        for level in levels[:-1]:
            if i % 2 == 0:
                path.append((Hash(level[i + 1]), False))
            else:
                path.append((Hash(level[i - 1]), True))
            i //= 2
        return LeafWitness(key, self._entries[key], index, tuple(path))

    def prove(self, key: Key) -> InclusionProof:
        return prove(self, key)


def digest_after(state: ShardState) -> Hash:
    return state.digest


EMPTY_DIGEST = ShardState().digest


def prove(state: ShardState, key: Key) -> InclusionProof:
    """Proof of ``key``'s value (0 when absent) under ``state.digest``."""
    keys = state.sorted_keys()
    n = len(keys)
    idx = bisect.bisect_left(keys, key)
    if key in state.entries:
        return InclusionProof(key, state.get(key), n, (state._witness(idx),))
    wits = []
    if idx > 0:
        wits.append(state._witness(idx - 1))
    if idx < n:
        wits.append(state._witness(idx))
    return InclusionProof(key, 0, n, tuple(wits))


def _witness_root(w: LeafWitness, leaf_count: int) -> Hash | None:
    depth = _depth(leaf_count)
    if len(w.path) != depth or not 0 <= w.index < leaf_count:
        return None
    node = leaf_hash(w.key, w.value)
    i = w.index
    for sibling, sib_left in w.path:
        if sib_left != (i % 2 == 1):
            return None
        node = _node(sibling, node) if sib_left else _node(node, sibling)
        i //= 2
    return _root(leaf_count, node)


def verify_proof(proof: InclusionProof, digest: Hash) -> bool:
    n = proof.leaf_count
    wits = proof.witnesses
    for w in wits:
        if w.value == 0 or _witness_root(w, n) != digest:
            return False
    if proof.value != 0:
        return len(wits) == 1 and wits[0].key == proof.key and wits[0].value == proof.value
    # absence: neighbours must bracket the key and be adjacent
    if n == 0:
        return len(wits) == 0 and digest == EMPTY_DIGEST
    if len(wits) == 2:
        lo, hi = wits
        return lo.index + 1 == hi.index and lo.key < proof.key < hi.key
    if len(wits) == 1:
        w = wits[0]
        if w.index == 0 and proof.key < w.key:
            return True
        return w.index == n - 1 and w.key < proof.key
    return False


# ---------------------------------------------------------------------------
# transition function


@record("TxResult")
@dataclass(frozen=True)
class TxResult:
    tx_id: Hash
    verdict: str
    reason: str | None
    writes: tuple  # ((Key, value), ...) sorted; includes foreign keys; empty on abort


@dataclass(frozen=True)
class ExecutionOutcome:
    new_state: ShardState
    results: tuple

    def verdicts(self) -> dict:
        return {r.tx_id: (r.verdict, r.reason) for r in self.results}


class _Abort(Exception):
    def __init__(self, reason):
        self.reason = reason


def run_program(tx, read) -> tuple[str, str | None, dict]:
    """Interpret ``tx.program`` with ``read(key)`` supplying pre-state values.

    Returns (verdict, reason, writes). Writes are buffered per transaction so
    a LOAD after STORE of the same key sees the stored value.
    """
    regs: dict[int, int] = {}
    buf: dict[Key, int] = {}
    reads, writes = tx.reads, tx.writes
    try:
        for ins in tx.program.instrs:
            op = ins.op
            if op == "LOAD":
                if ins.key not in reads:
                    raise _Abort(DECLARED_SET_MISMATCH)
                regs[ins.reg] = buf[ins.key] if ins.key in buf else read(ins.key)
            elif op == "STORE":
                if ins.key not in writes:
                    raise _Abort(DECLARED_SET_MISMATCH)
                buf[ins.key] = regs.get(ins.reg, 0)
            elif op == "ASSERT":
                if regs.get(ins.reg, 0) < 0:
                    raise _Abort(ASSERTION_FAILED)
            else:
                operand = regs.get(ins.src, 0) if ins.src is not None else ins.imm
                cur = regs.get(ins.reg, 0)
                if op == "ADD":
                    val = cur + operand
                elif op == "SUB":
                    val = cur - operand
                else:
                    val = operand
                if not INT64_MIN <= val <= INT64_MAX:
                    raise _Abort(ASSERTION_FAILED)
                regs[ins.reg] = val
    except _Abort as a:
        return ABORTED, a.reason, {}
    return COMMITTED, None, buf


def apply(state: ShardState, txs, foreign_reads: Mapping[Key, int] | None,
          shard: int, partition: PartitionMap) -> ExecutionOutcome:
    """Apply ``txs`` in order at ``shard``.

    Local keys read the state produced by earlier transactions in the list;
    keys homed elsewhere read ``foreign_reads`` (a snapshot fixed for the whole
    call). Only local writes are persisted; every write is reported.
    """
    foreign_reads = foreign_reads or {}
    local: dict[Key, int] = {}
    home = partition.home
    results = []

    def read(key: Key) -> int:
        if home(key) == shard:
            return local[key] if key in local else state.get(key)
        try:
            return foreign_reads[key]
        except KeyError:
            raise ExecutionError(f"foreign read {key} missing at shard {shard}") from None

    for tx in txs:
        verdict, reason, writes = run_program(tx, read)
        if verdict == COMMITTED:
            for k, v in writes.items():
                if home(k) == shard:
                    local[k] = v
        results.append(TxResult(tx.id, verdict, reason, tuple(sorted(writes.items()))))
    return ExecutionOutcome(state.with_updates(local), tuple(results))


def foreign_read_keys(txs, shard: int, partition: PartitionMap) -> set:
    return {k for tx in txs if isinstance(tx, CrossShardTx) for k in tx.reads if partition.home(k) != shard}


__all__ = [
    "ShardState", "InclusionProof", "LeafWitness", "ExecutionOutcome", "TxResult",
    "apply", "prove", "verify_proof", "digest_after", "run_program", "ExecutionError",
    "EMPTY_DIGEST", "COMMITTED", "ABORTED", "ASSERTION_FAILED", "DECLARED_SET_MISMATCH",
    "IntraShardTx", "foreign_read_keys",
]
