"""Replica state-machine plumbing shared by every protocol role.

A replica consumes one event at a time (message delivery, timer firing or a
harness injection) and returns a list of effects. It never touches the clock
or the network directly, so the simulator fully owns scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ConfigError, Keyring, PartitionMap, ReplicaId, ShardConfig


@dataclass(frozen=True)
class Send:
    to: ReplicaId
    msg: object


@dataclass(frozen=True)
class SetTimer:
    delay: float
    tag: tuple


@dataclass(frozen=True)
class Observe:
    kind: str
    data: dict


BEHAVIORS = frozenset({
    "equivocate_proposals", "vote_conflicting", "silent_cross_shard",
    "tamper_data_responses", "false_blame",
})


@dataclass
class NodeContext:
    """Run-wide read-only configuration handed to every replica."""

    config: ShardConfig
    keyring: Keyring
    partition: PartitionMap
    timing: object  # netsim.TimingConfig
    topology: object  # netsim.Topology
    genesis: dict  # shard -> ShardState
    behaviors: dict = field(default_factory=dict)  # ReplicaId -> frozenset of behavior names
    phases: dict = field(default_factory=dict)  # shard -> worker tick phase in seconds
    max_ctx_per_block: int | None = None
    exec_cache: dict = field(default_factory=dict)  # memo shared by honest replicas of a run

    def behaviors_of(self, rid: ReplicaId) -> frozenset:
        return self.behaviors.get(rid, frozenset())


class Node:
    """Base class: collects effects emitted while handling one event."""

    def __init__(self, rid: ReplicaId, ctx: NodeContext):
        if not ctx.config.has(rid):
            raise ConfigError(f"replica {rid} not in configuration")
        self.id = rid
        self.ctx = ctx
        self.byz = ctx.behaviors_of(rid)
        self.now = 0.0
        self._fx: list = []

    @property
    def f(self) -> int:
        return self.ctx.config.f

    def peers(self, shard: int | None = None) -> list[ReplicaId]:
        return self.ctx.config.replicas(self.id.shard if shard is None else shard)

    def send(self, to: ReplicaId, msg) -> None:
        self._fx.append(Send(to, msg))

    def multicast(self, targets, msg) -> None:
        for t in targets:
            self._fx.append(Send(t, msg))

    def timer(self, delay: float, tag: tuple) -> None:
        self._fx.append(SetTimer(max(delay, 0.0), tag))

    def observe(self, kind: str, **data) -> None:
        self._fx.append(Observe(kind, data))

    def handle(self, event: tuple, now: float) -> list:
        """``event`` is ("start",), ("msg", sender, msg), ("timer", tag) or ("inject", payload)."""
        self._fx = []
        self.now = now
        kind = event[0]
        if kind == "msg":
            handler = getattr(self, "on_" + type(event[2]).__name__, None)
            if handler is not None:
                handler(event[1], event[2])
        elif kind == "timer":
            self.on_timer(event[1])
        elif kind == "inject":
            self.on_inject(event[1])
        elif kind == "start":
            self.on_start()
        fx, self._fx = self._fx, []
        return fx

    def on_start(self):
        pass

    def on_timer(self, tag):
        pass

    def on_inject(self, payload):
        pass
