"""Deterministic discrete-event simulator for partially synchronous networks.

Events are processed in (time, seq) order where seq is a global insertion
counter, so a run is a pure function of (seed, config, workload, faults).
"""

from __future__ import annotations

import csv
import heapq
import io
import random
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .core import REFERENCE_SHARD, ConfigError, Keyring, ReplicaId, ShardConfig
from .node import BEHAVIORS, NodeContext, Observe, Send, SetTimer

HONEST, CRASHED, BYZANTINE = "honest", "crashed", "byzantine"


# ---------------------------------------------------------------------------
# timing and latency


@dataclass(frozen=True)
class TimingConfig:
    delta: float = 1.0
    i_w: float = 5.0
    i_r: float = 10.0
    async_windows: tuple = ()  # ((start, end), ...) in simulated seconds
    async_cap: float = 3.0  # upper bound on delays inside async windows
    jitter: float = 0.1
    uniform_delay: float | None = None  # replaces the latency matrix when set
    max_intra_per_block: int = 200

    def __post_init__(self):
        if self.delta <= 0 or self.i_w <= 0 or self.i_r <= 0:
            raise ConfigError("delta, i_w and i_r must be positive")
        if self.async_cap <= self.delta:
            raise ConfigError("async_cap must exceed delta")
        for s, e in self.async_windows:
            if e < s:
                raise ConfigError(f"bad async window ({s}, {e})")

    @property
    def t_f(self) -> float:
        return 7 * self.delta

    @property
    def round_timeout(self) -> float:
        return 4 * self.delta

    @property
    def bir(self) -> float:
        return self.i_r / self.i_w

    def in_async(self, t: float) -> bool:
        return any(s <= t < e for s, e in self.async_windows)


def load_latency_matrix(path=None) -> tuple[list[str], list[list[float]]]:
    """Region names and one-way delays in seconds."""
    if path is None:
        text = resources.files("rivet").joinpath("data/latency_10.csv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    regions = rows[0][1:]
    matrix = []
    for row in rows[1:]:
        matrix.append([float(x) / 2000.0 for x in row[1:]])
    if len(matrix) != len(regions) or any(len(r) != len(regions) for r in matrix):
        raise ConfigError("latency matrix must be square")
    return regions, matrix


class LatencyModel:
    """Places every replica in a region and returns base one-way delays."""

    def __init__(self, config: ShardConfig, seed: int = 0, matrix=None, uniform: float | None = None):
        self.regions, self.matrix = matrix if matrix is not None else load_latency_matrix()
        self.uniform = uniform
        rng = random.Random(f"regions-{seed}")
        n = len(self.regions)
        self.region_of = {}
        for s in range(config.k + 1):
            offset = rng.randrange(n)
            for r in config.replicas(s):
                self.region_of[r] = (offset + r.index) % n

    def base(self, frm: ReplicaId, to: ReplicaId) -> float:
        if self.uniform is not None:
            return self.uniform
        return self.matrix[self.region_of[frm]][self.region_of[to]]


def deliver_delay(timing: TimingConfig, latency: LatencyModel, frm, to, now: float, rng: random.Random,
                  honest_pair: bool = True) -> float:
    """Base delay plus uniform jitter, clamped to delta for honest pairs in
    synchrony; uniform in (delta, async_cap] inside an asynchronous window."""
    if timing.in_async(now):
        return timing.async_cap - (timing.async_cap - timing.delta) * rng.random()
    d = latency.base(frm, to) * (1.0 + timing.jitter * (2.0 * rng.random() - 1.0))
    if honest_pair:
        d = min(d, timing.delta)
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# topology and faults


class Topology:
    """Complete graph inside a shard; f+1 random links into every other shard."""

    def __init__(self, config: ShardConfig, seed: int = 0):
        rng = random.Random(f"topology-{seed}")
        self.config = config
        self._chosen: dict = {}
        links: dict = {}
        for node in config.all_replicas():
            for s in range(config.k + 1):
                if s == node.shard:
                    continue
                pool = config.replicas(s)
                pick = sorted(rng.sample(pool, min(config.f + 1, len(pool))))
                self._chosen[(node, s)] = pick
                for p in pick:
                    links.setdefault((node, s), set()).add(p)
                    links.setdefault((p, node.shard), set()).add(node)
        self._linked = {k: sorted(v) for k, v in links.items()}

    def chosen(self, node: ReplicaId, shard: int) -> list:
        if shard == node.shard:
            return self.config.replicas(shard)
        return self._chosen[(node, shard)]

    def linked(self, node: ReplicaId, shard: int) -> list:
        if shard == node.shard:
            return self.config.replicas(shard)
        return self._linked.get((node, shard), [])


@dataclass(frozen=True)
class Fault:
    kind: str = HONEST
    start: float = 0.0
    behaviors: frozenset = frozenset()


@dataclass
class FaultScript:
    faults: dict = field(default_factory=dict)  # ReplicaId -> Fault

    def get(self, rid) -> Fault:
        return self.faults.get(rid, Fault())

    def is_honest(self, rid) -> bool:
        return self.get(rid).kind == HONEST

    def behaviors(self) -> dict:
        return {r: f.behaviors for r, f in self.faults.items() if f.kind == BYZANTINE}

    def crashed(self, rid, t: float) -> bool:
        f = self.faults.get(rid)
        return f is not None and f.kind == CRASHED and t >= f.start

    def validate(self, config: ShardConfig):
        per_shard = Counter()
        for rid, f in self.faults.items():
            if not config.has(rid):
                raise ConfigError(f"fault for unknown replica {rid}")
            if f.kind not in (HONEST, CRASHED, BYZANTINE):
                raise ConfigError(f"unknown fault kind {f.kind}")
            unknown = set(f.behaviors) - BEHAVIORS
            if unknown:
                raise ConfigError(f"unknown behaviors {sorted(unknown)}")
            if f.kind != HONEST:
                per_shard[rid.shard] += 1
        for s, n in per_shard.items():
            if n > config.f:
                raise ConfigError(f"shard {s} has {n} faulty replicas, budget is f={config.f}")

    @classmethod
    def byzantine(cls, config: ShardConfig, behaviors, seed: int = 0, shards=None, count=None):
        """``count`` (default f) Byzantine replicas in each listed shard."""
        rng = random.Random(f"faults-{seed}")
        faults = {}
        shards = range(config.k + 1) if shards is None else shards
        for s in shards:
            n = config.f if count is None else count
            for r in rng.sample(config.replicas(s), n):
                faults[r] = Fault(BYZANTINE, 0.0, frozenset(behaviors))
        return cls(faults)

    @classmethod
    def crash(cls, replicas, at: float = 0.0):
        return cls({r: Fault(CRASHED, at) for r in replicas})

    def merged(self, other: "FaultScript") -> "FaultScript":
        return FaultScript({**self.faults, **other.faults})

    def to_json(self) -> list:
        return [
            {"replica": [r.shard, r.index], "kind": f.kind, "start": f.start, "behaviors": sorted(f.behaviors)}
            for r, f in sorted(self.faults.items())
        ]

    @classmethod
    def from_json(cls, items) -> "FaultScript":
        return cls({
            ReplicaId(*it["replica"]): Fault(it.get("kind", BYZANTINE), float(it.get("start", 0.0)),
                                             frozenset(it.get("behaviors", ())))
            for it in items or ()
        })


PRESETS = {
    # mirrors the random-equivocation adversaries used by earlier sharding prototypes
    "equivocate": ("equivocate_proposals", "vote_conflicting"),
    "tamper": ("tamper_data_responses", "silent_cross_shard"),
    "blame": ("false_blame",),
    "all": tuple(sorted(BEHAVIORS)),
}


# ---------------------------------------------------------------------------
# the event loop


class Simulator:
    def __init__(self, nodes: dict, timing: TimingConfig, latency: LatencyModel, faults: FaultScript,
                 seed: int = 0, trace_messages: bool = False):
        self.nodes = nodes
        self.timing = timing
        self.latency = latency
        self.faults = faults
        self.rng = random.Random(f"net-{seed}")
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.observations: list = []
        self.messages: list | None = [] if trace_messages else None
        self.msg_counts: Counter = Counter()
        self.sync_violations = 0
        self.max_sync_delay = 0.0
        self._honest = {r: faults.is_honest(r) for r in nodes}
        self.listeners: list = []

    def schedule(self, t: float, rid, event) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, rid, event))

    def _effects(self, rid, fx) -> None:
        now = self.now
        for e in fx:
            if type(e) is Send:
                to = e.to
                honest = self._honest.get(rid, True) and self._honest.get(to, True)
                d = deliver_delay(self.timing, self.latency, rid, to, now, self.rng, honest)
                if honest and not self.timing.in_async(now):
                    if d > self.timing.delta:
                        self.sync_violations += 1
                    if d > self.max_sync_delay:
                        self.max_sync_delay = d
                kind = type(e.msg).__name__
                self.msg_counts[kind] += 1
                if self.messages is not None:
                    self.messages.append((now, str(rid), str(to), kind, now + d))
                self.schedule(now + d, to, ("msg", rid, e.msg))
            elif type(e) is SetTimer:
                self.schedule(now + e.delay, rid, ("timer", e.tag))
            elif type(e) is Observe:
                obs = dict(e.data)
                obs["kind"] = e.kind
                self.observations.append(obs)
                for fn in self.listeners:
                    fn(obs, self)

    def run(self, horizon: float) -> None:
        for rid in sorted(self.nodes):
            self.schedule(0.0, rid, ("start",))
        heap = self.heap
        nodes = self.nodes
        faults = self.faults
        while heap:
            t, _, rid, event = heap[0]
            if t > horizon:
                break
            heapq.heappop(heap)
            self.now = t
            if faults.crashed(rid, t):
                continue
            self._effects(rid, nodes[rid].handle(event, t))
        self.now = horizon


# ---------------------------------------------------------------------------
# assembling a run


@dataclass(frozen=True)
class RunConfig:
    protocol: str = "rivet"  # rivet | tpc
    f: int = 1
    k: int = 2
    timing: TimingConfig = TimingConfig()
    inject: int = 100  # ctxs injected per reference/coordinator block
    intra: int = 10  # intra-shard txs injected per shard per worker interval
    max_ctx_per_block: int | None = None
    trace_messages: bool = False

    def shard_config(self) -> ShardConfig:
        if self.protocol == "rivet":
            return ShardConfig.rivet(self.f, self.k)
        if self.protocol == "tpc":
            return ShardConfig.tpc(self.f, self.k)
        raise ConfigError(f"unknown protocol {self.protocol!r}")


@dataclass
class RunResult:
    config: RunConfig
    seed: int
    horizon_blocks: int
    horizon: float
    observations: list
    chain_logs: dict  # name -> list of json-able dicts
    injections: dict  # {"ctx": {id hex: time}, "intra": {id hex: time}}
    msg_counts: dict
    sync_violations: int
    max_sync_delay: float
    messages: list | None
    honest: list
    nodes: dict
    views: dict = field(default_factory=dict)


def run_horizon(timing: TimingConfig, horizon_blocks: int) -> float:
    """Simulated end time: enough for ``horizon_blocks + 1`` reference blocks,
    each proposed I_r after the previous decision and decided within 2Δ under
    synchrony, plus one worker interval to settle; async windows add their length."""
    extra = sum(e - s for s, e in timing.async_windows)
    return (horizon_blocks + 1) * (timing.i_r + 2 * timing.delta) + timing.i_w + extra


def worker_phases(k: int, i_w: float, seed: int) -> dict:
    rng = random.Random(f"phases-{seed}")
    return {a: rng.uniform(0.0, i_w) for a in range(1, k + 1)}


def run(config: RunConfig, workload, faults: FaultScript | None = None, seed: int = 0,
        horizon_blocks: int = 50, latency: LatencyModel | None = None) -> RunResult:
    """Drive every replica until reference height ``horizon_blocks`` has had
    time to settle; return observations and chain logs."""
    from . import reference, twopc, worker  # protocol roles

    sc = config.shard_config()
    if workload.partition.k != sc.k:
        raise ConfigError("workload partition and shard config disagree on k")
    faults = faults or FaultScript()
    faults.validate(sc)
    timing = config.timing
    latency = latency or LatencyModel(sc, seed, uniform=timing.uniform_delay)
    ctx = NodeContext(
        config=sc, keyring=Keyring(sc, seed), partition=workload.partition, timing=timing,
        topology=Topology(sc, seed), genesis=workload.genesis, behaviors=faults.behaviors(),
        phases=worker_phases(sc.k, timing.i_w, seed), max_ctx_per_block=config.max_ctx_per_block,
    )
    nodes: dict = {}
    if config.protocol == "rivet":
        gblocks = {a: worker.genesis_block(a, workload.genesis[a].digest) for a in range(1, sc.k + 1)}
        for r in sc.replicas(REFERENCE_SHARD):
            nodes[r] = reference.RefReplica(r, ctx, gblocks)
        for a in range(1, sc.k + 1):
            for r in sc.replicas(a):
                nodes[r] = worker.WorkerReplica(r, ctx, gblocks)
    else:
        gblocks = {a: twopc.genesis_block(a, workload.genesis[a].digest) for a in range(1, sc.k + 1)}
        for r in sc.replicas(REFERENCE_SHARD):
            nodes[r] = twopc.CoordinatorReplica(r, ctx, gblocks)
        for a in range(1, sc.k + 1):
            for r in sc.replicas(a):
                nodes[r] = twopc.TpcWorkerReplica(r, ctx, gblocks)

    sim = Simulator(nodes, timing, latency, faults, seed, config.trace_messages)
    horizon = run_horizon(timing, horizon_blocks)
    injections: dict = {"ctx": {}, "intra": {}}
    ref_replicas = sc.replicas(REFERENCE_SHARD)

    def inject_ctx(batch_no: int, t: float):
        batch = workload.ctx_batch(batch_no, config.inject)
        for tx in batch:
            injections["ctx"].setdefault(tx.id.hex(), t)
        for r in ref_replicas:
            sim.schedule(t, r, ("inject", ("ctx", batch)))

    decided: set = set()

    def on_observe(obs, s):
        if obs["kind"] == "bft_decide" and obs["shard"] == REFERENCE_SHARD:
            h = obs["height"]
            if h not in decided:
                decided.add(h)
                inject_ctx(h, s.now)

    sim.listeners.append(on_observe)
    if config.inject > 0:
        inject_ctx(0, 0.0)
    if config.intra > 0:
        m = 0
        while m * timing.i_w <= horizon:
            t = m * timing.i_w
            for a in range(1, sc.k + 1):
                txs = workload.intra_batch(a, m, config.intra)
                if not txs:
                    continue
                for tx in txs:
                    injections["intra"].setdefault(tx.id.hex(), t)
                for r in sc.replicas(a):
                    sim.schedule(t, r, ("inject", ("intra", txs)))
            m += 1
    sim.run(horizon)

    honest = [r for r in sorted(nodes) if faults.is_honest(r)]
    if config.protocol == "rivet":
        chain_logs = reference_chain_logs(nodes, honest, sc)
        chain_logs.update(rivet_worker_logs(chain_logs["reference"], sim.observations, sc.k))
    else:
        chain_logs = twopc.chain_logs(nodes, honest, sc)
    return RunResult(
        views=finalized_views(nodes, honest, config.protocol),
        config=config, seed=seed, horizon_blocks=horizon_blocks, horizon=horizon,
        observations=sim.observations, chain_logs=chain_logs, injections=injections,
        msg_counts=dict(sorted(sim.msg_counts.items())), sync_violations=sim.sync_violations,
        max_sync_delay=sim.max_sync_delay, messages=sim.messages, honest=[str(r) for r in honest],
        nodes=nodes,
    )


def reference_chain_logs(nodes, honest, sc) -> dict:
    from .reference import ref_block_json

    ref = [r for r in honest if r.shard == REFERENCE_SHARD]
    best = max(ref, key=lambda r: (nodes[r].chain.height, -r.index))
    blocks = nodes[best].chain.blocks[1:]
    return {"reference": [ref_block_json(b) for b in blocks]}


def rivet_worker_logs(reference_log: list, observations, k: int) -> dict:
    """Finalized worker chains, read off the reference commitments and joined
    with the leader's certification record for each block."""
    cert: dict = {}
    for o in observations:
        if o["kind"] == "worker_certified":
            cert.setdefault(o["hash"], o)
    logs: dict = {f"shard{a}": [] for a in range(1, k + 1)}
    for rb in reference_log:
        for c in rb["commitments"]:
            for h, parent, height in zip(c["hash_chain"], c["parents"], c["heights"]):
                o = cert.get(h, {})
                logs[f"shard{c['shard']}"].append({
                    "shard": c["shard"], "height": height, "hash": h, "parent": parent,
                    "ref_height": o.get("ref_height"), "certified_at": o.get("time"),
                    "finalized_in": rb["height"], "ctxs": o.get("ctxs", []), "intra": o.get("intra", []),
                })
    return logs


def finalized_views(nodes, honest, protocol: str) -> dict:
    """Per shard, per honest replica: [[height, hash], ...] of what it holds final."""
    out: dict = {}
    for r in honest:
        n = nodes[r]
        if r.shard == REFERENCE_SHARD:
            seq = [[b.height, b.hash.hex()] for b in n.chain.blocks[1:]]
        elif protocol == "rivet":
            seq = [[h, x] for h, x in n.final_log]
        else:
            seq = [[h, n.bft.history[h][0].hash.hex()] for h in sorted(n.bft.history)]
        out.setdefault(f"shard{r.shard}", {})[str(r)] = seq
    return out
