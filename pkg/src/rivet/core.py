"""Shared protocol types, identifiers and the simulated signature layer."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .codec import encode, record

REFERENCE_SHARD = 0
GLOBAL, LOCAL = "global", "local"


class ConfigError(ValueError):
    """Inconsistent configuration (unknown replica, bad shard sizes, ...)."""


class WorkloadError(ValueError):
    """Malformed workload item (unmapped account, degenerate cross-shard tx)."""


class Hash(bytes):
    """32-byte digest. Renders as hex."""

    def __new__(cls, value: bytes):
        if len(value) != 32:
            raise ValueError(f"hash must be 32 bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self):
        return f"Hash({self.hex()[:16]}..)"

    def __str__(self):
        return self.hex()

    @classmethod
    def from_hex(cls, s: str) -> "Hash":
        return cls(bytes.fromhex(s))


def sha256(data: bytes) -> Hash:
    return Hash(hashlib.sha256(data).digest())


def hash_of(value) -> Hash:
    """Digest of the canonical encoding of ``value``."""
    return sha256(encode(value))


ZERO_HASH = Hash(bytes(32))


@record("ReplicaId")
@dataclass(frozen=True, order=True)
class ReplicaId:
    shard: int
    index: int

    def __str__(self):
        return f"{self.shard}.{self.index}"


@record("Key")
@dataclass(frozen=True, order=True)
class Key:
    account: str
    slot: int = 0

    def __str__(self):
        return f"{self.account}/{self.slot}"


@record("Instr")
@dataclass(frozen=True)
class Instr:
    """One payload instruction.

    LOAD reg<-key, STORE key<-reg, ADD/SUB reg (op)= src-register or imm,
    MOV reg = src-register or imm, ASSERT reg >= 0.
    """

    op: str
    reg: int = 0
    key: Key | None = None
    src: int | None = None
    imm: int = 0


OPS = ("LOAD", "STORE", "ADD", "SUB", "MOV", "ASSERT")


@record("PayloadProgram")
@dataclass(frozen=True)
class PayloadProgram:
    instrs: tuple = ()
    contract_tag: str = GLOBAL

    def __post_init__(self):
        for ins in self.instrs:
            if ins.op not in OPS:
                raise WorkloadError(f"unknown instruction {ins.op}")
        if self.contract_tag not in (GLOBAL, LOCAL):
            raise WorkloadError(f"bad contract tag {self.contract_tag}")

    def touched(self) -> tuple[set, set]:
        loads = {i.key for i in self.instrs if i.op == "LOAD"}
        stores = {i.key for i in self.instrs if i.op == "STORE"}
        return loads, stores


@dataclass(frozen=True)
class PartitionMap:
    """Account -> worker shard assignment (shards numbered 1..k)."""

    assign: Mapping[str, int]
    k: int

    def __post_init__(self):
        for acc, s in self.assign.items():
            if not 1 <= s <= self.k:
                raise WorkloadError(f"account {acc} mapped to shard {s} outside 1..{self.k}")

    def shard_of(self, account: str) -> int:
        try:
            return self.assign[account]
        except KeyError:
            raise WorkloadError(f"account {account!r} is not in the partition") from None

    def home(self, key: Key) -> int:
        return self.shard_of(key.account)

    def accounts_of(self, shard: int) -> list[str]:
        return sorted(a for a, s in self.assign.items() if s == shard)


@record("IntraShardTx")
@dataclass(frozen=True)
class IntraShardTx:
    id: Hash
    shard: int
    reads: frozenset
    writes: frozenset
    program: PayloadProgram

    @classmethod
    def create(cls, shard, reads, writes, program, partition: PartitionMap, nonce=0):
        reads, writes = frozenset(reads), frozenset(writes)
        for key in reads | writes:
            if partition.home(key) != shard:
                raise WorkloadError(f"intra-shard tx for shard {shard} touches {key} homed elsewhere")
        tid = hash_of(("intra", nonce, shard, reads, writes, program))
        return cls(tid, shard, reads, writes, program)

    @cached_property
    def keys(self) -> frozenset:
        return self.reads | self.writes


@record("CrossShardTx")
@dataclass(frozen=True)
class CrossShardTx:
    id: Hash
    reads: frozenset
    writes: frozenset
    program: PayloadProgram
    shards: frozenset = field(default=frozenset())

    @classmethod
    def create(cls, reads, writes, program, partition: PartitionMap, nonce=0):
        reads, writes = frozenset(reads), frozenset(writes)
        shards = frozenset(partition.home(k) for k in reads | writes)
        if len(shards) < 2:
            raise WorkloadError(f"cross-shard tx must span >= 2 shards, got {sorted(shards)}")
        if program.contract_tag != GLOBAL:
            raise WorkloadError("cross-shard transactions may only invoke global contracts")
        tid = hash_of(("ctx", nonce, reads, writes, program))
        return cls(tid, reads, writes, program, shards)

    @cached_property
    def keys(self) -> frozenset:
        return self.reads | self.writes

    def reads_at(self, shard: int, partition: PartitionMap) -> frozenset:
        return frozenset(k for k in self.reads if partition.home(k) == shard)

    def writes_at(self, shard: int, partition: PartitionMap) -> frozenset:
        return frozenset(k for k in self.writes if partition.home(k) == shard)


def involved_shards(tx: CrossShardTx, partition: PartitionMap) -> frozenset:
    """Home shards of every key the transaction declares."""
    return frozenset(partition.home(k) for k in tx.reads | tx.writes)


@dataclass(frozen=True)
class ShardConfig:
    f: int
    k: int
    worker_size: int
    reference_size: int

    def __post_init__(self):
        if self.f < 0 or self.k < 1:
            raise ConfigError("need f >= 0 and k >= 1")
        if self.reference_size != 3 * self.f + 1:
            raise ConfigError("reference shard must have 3f+1 replicas")
        if self.worker_size not in (2 * self.f + 1, 3 * self.f + 1):
            raise ConfigError("worker shards must have 2f+1 (rivet) or 3f+1 (2pc) replicas")

    @classmethod
    def rivet(cls, f: int, k: int) -> "ShardConfig":
        return cls(f, k, 2 * f + 1, 3 * f + 1)

    @classmethod
    def tpc(cls, f: int, k: int) -> "ShardConfig":
        return cls(f, k, 3 * f + 1, 3 * f + 1)

    @property
    def worker_quorum(self) -> int:
        return self.f + 1

    @property
    def consensus_quorum(self) -> int:
        return 2 * self.f + 1

    def size(self, shard: int) -> int:
        if shard == REFERENCE_SHARD:
            return self.reference_size
        if 1 <= shard <= self.k:
            return self.worker_size
        raise ConfigError(f"no shard {shard}")

    def replicas(self, shard: int) -> list[ReplicaId]:
        return [ReplicaId(shard, i) for i in range(self.size(shard))]

    def all_replicas(self) -> list[ReplicaId]:
        return [r for s in range(self.k + 1) for r in self.replicas(s)]

    def has(self, r: ReplicaId) -> bool:
        return 0 <= r.shard <= self.k and 0 <= r.index < self.size(r.shard)


@record("Signature")
@dataclass(frozen=True)
class Signature:
    signer: ReplicaId
    message_digest: Hash
    mac: bytes


@record("Certificate")
@dataclass(frozen=True)
class Certificate:
    block_hash: Hash
    signatures: frozenset

    def signers(self) -> frozenset:
        return frozenset(s.signer for s in self.signatures)


class Keyring:
    """Simulated signing keys, one HMAC secret per configured replica.

    Unforgeability holds inside the simulator because protocol code only
    ever signs with its own replica id.
    """

    def __init__(self, config: ShardConfig, seed: int = 0):
        self.config = config
        self._seed = seed
        self._secrets: dict[ReplicaId, bytes] = {}
        self._verified: dict[tuple, bool] = {}

    def _secret(self, replica: ReplicaId) -> bytes:
        s = self._secrets.get(replica)
        if s is None:
            if not self.config.has(replica):
                raise ConfigError(f"unknown replica {replica}")
            s = hashlib.sha256(b"rivet-sim-key" + encode((self._seed, replica))).digest()
            self._secrets[replica] = s
        return s

    def sign(self, replica: ReplicaId, digest: Hash) -> Signature:
        mac = hmac.new(self._secret(replica), digest, hashlib.sha256).digest()
        return Signature(replica, digest, mac)

    def verify(self, sig: Signature, digest: Hash) -> bool:
        if sig.message_digest != digest or not self.config.has(sig.signer):
            return False
        memo = (sig.signer, digest, sig.mac)
        ok = self._verified.get(memo)
        if ok is None:
            expect = hmac.new(self._secret(sig.signer), digest, hashlib.sha256).digest()
            ok = hmac.compare_digest(expect, sig.mac)
            self._verified[memo] = ok
        return ok

    def certify(self, block_hash: Hash, signers: Iterable[ReplicaId], digest: Hash | None = None) -> Certificate:
        d = block_hash if digest is None else digest
        return Certificate(block_hash, frozenset(self.sign(r, d) for r in signers))


def validate_certificate(cert: Certificate, keyring: Keyring, shard: int, quorum: int,
                         digest: Hash | None = None) -> bool:
    """All signatures verify over ``digest`` (default: the block hash), all
    signers belong to ``shard``, and at least ``quorum`` distinct signers."""
    d = cert.block_hash if digest is None else digest
    signers = set()
    for sig in cert.signatures:
        if sig.signer.shard != shard or not keyring.verify(sig, d):
            return False
        signers.add(sig.signer)
    return len(signers) >= quorum
