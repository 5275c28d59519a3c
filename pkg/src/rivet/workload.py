"""Benchmark workloads: traces, the account interaction graph, and the
transaction streams fed into protocol runs.

Trace file format (JSON lines, one record per line)::

    {"id": "t0", "block": 0, "accounts": ["a1", "a2"],
     "reads": [["a1", 0], ["a2", 0]], "writes": [["a1", 0]],
     "gas": 31000, "bytes": 164, "program": "transfer"}

``program`` is one of ``transfer`` (debit the first written key, credit the
rest, balance-check every read-only key) or ``mismatch`` (additionally
stores to an undeclared key, so execution aborts).
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import GLOBAL, LOCAL, CrossShardTx, Instr, IntraShardTx, Key, PartitionMap, PayloadProgram, WorkloadError
from .crossexec import VALUE_BYTES
from .state import ShardState

GENESIS_BALANCE = 1000
PROGRAMS = ("transfer", "mismatch")


@dataclass(frozen=True)
class TraceRecord:
    tx_id: str
    block: int
    accounts: tuple
    reads: tuple  # ((account, slot), ...)
    writes: tuple
    gas: int = 21000
    byte_size: int = 110
    program: str = "transfer"

    def __post_init__(self):
        if not self.accounts:
            raise WorkloadError(f"record {self.tx_id} touches no account")
        accs = set(self.accounts)
        for acc, _ in self.reads + self.writes:
            if acc not in accs:
                raise WorkloadError(f"record {self.tx_id} references {acc} outside its account list")
        if self.program not in PROGRAMS:
            raise WorkloadError(f"record {self.tx_id} has unknown program {self.program!r}")

    def to_json(self) -> dict:
        return {
            "id": self.tx_id, "block": self.block, "accounts": list(self.accounts),
            "reads": [list(k) for k in self.reads], "writes": [list(k) for k in self.writes],
            "gas": self.gas, "bytes": self.byte_size, "program": self.program,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        return cls(
            str(d["id"]), int(d.get("block", 0)), tuple(d["accounts"]),
            tuple((a, int(s)) for a, s in d.get("reads", ())),
            tuple((a, int(s)) for a, s in d.get("writes", ())),
            int(d.get("gas", 21000)), int(d.get("bytes", 110)), d.get("program", "transfer"),
        )


def write_trace(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_trace(path) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(TraceRecord.from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as e:
                raise WorkloadError(f"{path}:{n}: bad trace record ({e})") from None
    return out


# ---------------------------------------------------------------------------
# synthetic traces


@dataclass(frozen=True)
class SyntheticParams:
    accounts: int = 1000
    records: int = 5000
    zipf: float = 1.0
    multi: tuple = (0.55, 0.3, 0.1, 0.05)  # P(record touches 1, 2, 3, 4 accounts)
    communities: int = 0  # 0 disables locality
    locality: float = 0.9  # P(extra account comes from the first account's community)
    read_only: float = 0.2  # P(an extra account is only read)
    hot_accounts: int = 0  # read-mostly accounts (price feeds, registries)
    hot_prob: float = 0.0  # P(record also reads one hot account)
    slots: int = 2  # storage slots per account
    mismatch_prob: float = 0.0
    per_block: int = 100
    seed: int = 0


def _zipf_weights(n: int, s: float, rng) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** s
    w = w[rng.permutation(n)]
    return w / w.sum()


def generate_synthetic(p: SyntheticParams) -> list[TraceRecord]:
    """Seeded trace with Zipf popularity and optional community locality."""
    if p.accounts < 1 or p.records < 0:
        raise WorkloadError("need at least one account")
    multi = np.asarray(p.multi, dtype=float)
    if multi.min() < 0 or multi.sum() <= 0:
        raise WorkloadError("multi-account probability vector must be non-negative and non-zero")
    multi = multi / multi.sum()
    rng = np.random.default_rng(p.seed)
    names = [f"a{i}" for i in range(p.accounts)]
    hot = [f"h{i}" for i in range(p.hot_accounts)]
    pop = _zipf_weights(p.accounts, p.zipf, rng)
    if p.communities > 0:
        comm = rng.integers(0, p.communities, size=p.accounts)
        members = [np.flatnonzero(comm == c) for c in range(p.communities)]
        member_cdf = [np.cumsum(pop[m]) for m in members]
    cdf = np.cumsum(pop)

    def draw(c):
        u = rng.random() * c[-1]
        return min(int(np.searchsorted(c, u, side="right")), len(c) - 1)

    sizes = rng.choice(len(multi), size=p.records, p=multi) + 1
    firsts = rng.choice(p.accounts, size=p.records, p=pop)
    out = []
    for i in range(p.records):
        first = int(firsts[i])
        chosen = [first]
        want = min(int(sizes[i]), p.accounts)
        tries = 0
        while len(chosen) < want and tries < 50:
            tries += 1
            if p.communities > 0 and rng.random() < p.locality:
                c = comm[first]
                cand = int(members[c][draw(member_cdf[c])])
            else:
                cand = draw(cdf)
            if cand not in chosen:
                chosen.append(cand)
        reads, writes = [], []
        slot0 = int(rng.integers(0, p.slots))
        reads.append((names[chosen[0]], slot0))
        writes.append((names[chosen[0]], slot0))
        for j in chosen[1:]:
            key = (names[j], int(rng.integers(0, p.slots)))
            reads.append(key)
            if rng.random() >= p.read_only:
                writes.append(key)
        accounts = [names[j] for j in chosen]
        if hot and rng.random() < p.hot_prob:
            h = hot[int(rng.integers(0, len(hot)))]
            accounts.append(h)
            reads.append((h, 0))
        program = "mismatch" if rng.random() < p.mismatch_prob else "transfer"
        nkeys = len(set(reads) | set(writes))
        out.append(TraceRecord(
            f"t{i}", i // max(p.per_block, 1), tuple(accounts), tuple(reads), tuple(writes),
            21000 + 5000 * nkeys + int(rng.integers(0, 1000)), 100 + 32 * nkeys, program,
        ))
    return out


# ---------------------------------------------------------------------------
# interaction graph


@dataclass
class VertexWeights:
    degree: int = 0
    storage: int = 0
    gas: int = 0
    bytes: int = 0

    def as_tuple(self) -> tuple:
        return (self.degree, self.storage, self.gas, self.bytes)


@dataclass
class InteractionGraph:
    vertices: dict = field(default_factory=dict)  # account -> VertexWeights
    edges: dict = field(default_factory=dict)  # (a, b) with a < b -> weight

    def neighbours(self) -> dict:
        adj: dict = defaultdict(dict)
        for (a, b), w in self.edges.items():
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def cut(self, assign: dict) -> int:
        return sum(w for (a, b), w in self.edges.items() if assign[a] != assign[b])


def build_graph(records) -> InteractionGraph:
    """Clique edges per record; degree, storage (32 bytes per distinct slot),
    gas and byte weights per account."""
    g = InteractionGraph()
    slots: dict = defaultdict(set)
    for r in records:
        accs = sorted(set(r.accounts))
        for a in accs:
            v = g.vertices.setdefault(a, VertexWeights())
            v.degree += 1
            v.gas += r.gas
            v.bytes += r.byte_size
        for acc, slot in r.reads + r.writes:
            slots[acc].add(slot)
        for a, b in combinations(accs, 2):
            g.edges[(a, b)] = g.edges.get((a, b), 0) + 1
    for a, v in g.vertices.items():
        v.storage = VALUE_BYTES * len(slots[a])
    return g


# ---------------------------------------------------------------------------
# emission


def record_program(r: TraceRecord, contract_tag: str) -> PayloadProgram:
    """Debit the first written key by a record-derived amount, credit the other
    written keys, and balance-check every read-only key."""
    amount = 1 + sum(map(ord, r.tx_id)) % 5
    reads = [Key(a, s) for a, s in r.reads]
    writes = [Key(a, s) for a, s in r.writes]
    ins = []
    reg = 0
    if writes:
        src = writes[0]
        if src in reads:
            ins += [Instr("LOAD", 0, src), Instr("SUB", 0, imm=amount), Instr("ASSERT", 0)]
        else:
            ins.append(Instr("MOV", 0, imm=amount))
        ins.append(Instr("STORE", 0, src))
        for w in writes[1:]:
            if w in reads:
                ins.append(Instr("LOAD", 1, w))
            else:
                ins.append(Instr("MOV", 1, imm=0))
            ins += [Instr("ADD", 1, imm=amount), Instr("STORE", 1, w)]
        reg = 2
    for k in reads:
        if k not in writes:
            ins += [Instr("LOAD", reg, k), Instr("ASSERT", reg)]
    if r.program == "mismatch":
        ins.append(Instr("STORE", 0, Key(r.accounts[0], 10_000)))
    return PayloadProgram(tuple(ins), contract_tag)


def record_to_tx(r: TraceRecord, partition: PartitionMap, nonce: int = 0):
    reads = {Key(a, s) for a, s in r.reads}
    writes = {Key(a, s) for a, s in r.writes}
    homes = {partition.home(k) for k in reads | writes}
    if not homes:
        raise WorkloadError(f"record {r.tx_id} declares no keys")
    if len(homes) >= 2:
        return CrossShardTx.create(reads, writes, record_program(r, GLOBAL), partition, nonce=(r.tx_id, nonce))
    return IntraShardTx.create(homes.pop(), reads, writes, record_program(r, LOCAL), partition,
                               nonce=(r.tx_id, nonce))


class ShardedWorkload:
    """Transaction streams for one protocol run.

    ``ctx_batch(i, n)`` and ``intra_batch(shard, m, n)`` are pure functions of
    their arguments: the underlying streams are cycled with a fresh nonce per
    pass so ids stay unique.
    """

    def __init__(self, partition: PartitionMap, ctxs: list, intra: dict, genesis: dict):
        self.partition = partition
        self._ctx_records = ctxs
        self._intra_records = intra  # shard -> [record]
        self.genesis = genesis
        self._cache: dict = {}

    @property
    def k(self) -> int:
        return self.partition.k

    def _take(self, stream, start: int, n: int) -> list:
        if not stream:
            return []
        out = []
        L = len(stream)
        for j in range(start, start + n):
            key = (id(stream), j)
            tx = self._cache.get(key)
            if tx is None:
                tx = self._cache[key] = record_to_tx(stream[j % L], self.partition, nonce=j // L)
            out.append(tx)
        return out

    def ctx_batch(self, i: int, n: int) -> list:
        return self._take(self._ctx_records, i * n, n)

    def intra_batch(self, shard: int, m: int, n: int) -> list:
        return self._take(self._intra_records.get(shard, []), m * n, n)


def genesis_states(records, partition: PartitionMap) -> dict:
    """Every key touched by the trace starts with GENESIS_BALANCE at its home shard."""
    per: dict = {a: {} for a in range(1, partition.k + 1)}
    for r in records:
        for a, s in r.reads + r.writes:
            per[partition.shard_of(a)][Key(a, s)] = GENESIS_BALANCE
    return {a: ShardState(e) for a, e in per.items()}


def is_cross(r: TraceRecord, partition: PartitionMap) -> bool:
    return len({partition.shard_of(a) for a, _ in r.reads + r.writes}) >= 2


def emit_workload(records, partition: PartitionMap) -> ShardedWorkload:
    ctxs, intra = [], defaultdict(list)
    for r in sorted(records, key=lambda r: r.block):  # stable: keeps in-block order
        if not r.reads and not r.writes:
            continue
        if is_cross(r, partition):
            ctxs.append(r)
        else:
            acc = (r.reads or r.writes)[0][0]
            intra[partition.shard_of(acc)].append(r)
    return ShardedWorkload(partition, ctxs, dict(intra), genesis_states(records, partition))


# ---------------------------------------------------------------------------
# statistics


def pair_matrix(records, partition: PartitionMap) -> np.ndarray:
    """k x k matrix: [a][a] = fraction of records local to a; [a][b] = fraction
    of records whose key set spans both a and b."""
    k = partition.k
    m = np.zeros((k, k))
    n = 0
    for r in records:
        shards = sorted({partition.shard_of(a) for a, _ in r.reads + r.writes})
        if not shards:
            continue
        n += 1
        if len(shards) == 1:
            m[shards[0] - 1, shards[0] - 1] += 1
        else:
            for a, b in combinations(shards, 2):
                m[a - 1, b - 1] += 1
                m[b - 1, a - 1] += 1
    return m / max(n, 1)


def foreign_bytes(r: TraceRecord, shard: int, partition: PartitionMap) -> int:
    return VALUE_BYTES * len({(a, s) for a, s in r.reads if partition.shard_of(a) != shard})


def download_cdf(records, partition: PartitionMap) -> list[tuple]:
    """Rows (bytes, F_1, ..., F_k): per shard, the fraction of its cross-shard
    records needing at most that many bytes from other shards."""
    per: dict = {a: Counter() for a in range(1, partition.k + 1)}
    for r in records:
        if not is_cross(r, partition):
            continue
        for a in sorted({partition.shard_of(acc) for acc, _ in r.reads + r.writes}):
            per[a][foreign_bytes(r, a, partition)] += 1
    sizes = sorted(set().union(*[set(c) for c in per.values()])) if per else []
    rows = []
    for b in sizes:
        row = [b]
        for a in range(1, partition.k + 1):
            tot = sum(per[a].values())
            row.append(sum(v for s, v in per[a].items() if s <= b) / tot if tot else 0.0)
        rows.append(tuple(row))
    return rows


def write_stats(records, partition: PartitionMap, out_dir) -> dict:
    """pair_matrix.csv and download_cdf.csv under ``out_dir``; returns their paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    k = partition.k
    cols = [f"s{a}" for a in range(1, k + 1)]
    pm_path = os.path.join(out_dir, "pair_matrix.csv")
    with open(pm_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shard"] + cols)
        for a, row in enumerate(pair_matrix(records, partition), 1):
            w.writerow([f"s{a}"] + [f"{x:.6f}" for x in row])
    cdf_path = os.path.join(out_dir, "download_cdf.csv")
    with open(cdf_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["keysize"] + cols)
        for row in download_cdf(records, partition):
            w.writerow([row[0]] + [f"{x:.6f}" for x in row[1:]])
    return {"pair_matrix": pm_path, "download_cdf": cdf_path}
