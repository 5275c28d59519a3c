"""Multi-constraint balanced k-way partitioning of the interaction graph.

Multilevel scheme: heavy-edge matching coarsens the graph, the coarsest
graph is split by greedy region growing in descending-degree order, and
every level is refined on the way back up with boundary moves (and, on
small graphs, pairwise swaps) that lower the cut while each shard stays
within ``beta`` times the mean on all four vertex weights. A few seeded
restarts run; the lowest feasible cut wins.
"""

from __future__ import annotations

import csv
import logging
import math
import random
from itertools import product

import numpy as np

from .core import PartitionMap, WorkloadError

METRICS = 4
log = logging.getLogger(__name__)


class InfeasibleBalance(WorkloadError):
    """No assignment keeps every shard within the balance factor."""


def _weights(graph) -> tuple[list, dict, list]:
    names = sorted(graph.vertices)
    w = {a: graph.vertices[a].as_tuple() for a in names}
    totals = [sum(w[a][m] for a in names) for m in range(METRICS)]
    return names, w, totals


def _caps(totals, k, beta):
    return [beta * t / k for t in totals]


def balanced(assign: dict, graph, k: int, beta: float) -> bool:
    names, w, totals = _weights(graph)
    caps = _caps(totals, k, beta)
    loads = [[0] * METRICS for _ in range(k + 1)]
    for a in names:
        for m in range(METRICS):
            loads[assign[a]][m] += w[a][m]
    return all(loads[s][m] <= caps[m] + 1e-9 for s in range(1, k + 1) for m in range(METRICS))


def _excess(loads, caps) -> float:
    return sum(max(0.0, loads[m] - caps[m]) / caps[m] for m in range(METRICS) if caps[m])


class _Level:
    """One graph of the hierarchy: vertices are 0..n-1."""

    def __init__(self, w: list, adj: list):
        self.w = w
        self.adj = adj

    @property
    def n(self):
        return len(self.w)


class _State:
    def __init__(self, level: _Level, k: int, caps):
        self.k = k
        self.g = level
        self.caps = caps
        self.assign = [0] * level.n
        self.loads = [[0.0] * METRICS for _ in range(k + 1)]

    def fits(self, v, s, out=None) -> bool:
        wv = self.g.w[v]
        lo = self.loads[s]
        wo = self.g.w[out] if out is not None else (0,) * METRICS
        return all(lo[m] + wv[m] - wo[m] <= self.caps[m] + 1e-9 for m in range(METRICS))

    def ratio(self, s) -> float:
        return max((self.loads[s][m] / self.caps[m]) if self.caps[m] else 0.0 for m in range(METRICS))

    def place(self, v, s):
        old = self.assign[v]
        wv = self.g.w[v]
        if old:
            lo = self.loads[old]
            for m in range(METRICS):
                lo[m] -= wv[m]
        ln = self.loads[s]
        for m in range(METRICS):
            ln[m] += wv[m]
        self.assign[v] = s

    def conn(self, v) -> list:
        c = [0] * (self.k + 1)
        a = self.assign
        for u, wt in self.g.adj[v].items():
            c[a[u]] += wt
        return c

    def feasible(self) -> bool:
        return all(self.ratio(s) <= 1 + 1e-9 for s in range(1, self.k + 1))

    def move_excess(self, v, src, dst) -> float:
        wv = self.g.w[v]
        ls, ld = self.loads[src], self.loads[dst]
        before = _excess(ls, self.caps) + _excess(ld, self.caps)
        after = (_excess([ls[m] - wv[m] for m in range(METRICS)], self.caps)
                 + _excess([ld[m] + wv[m] for m in range(METRICS)], self.caps))
        return after - before

    def cut(self) -> int:
        a = self.assign
        return sum(wt for v in range(self.g.n) for u, wt in self.g.adj[v].items() if v < u and a[v] != a[u])


def _coarsen(level: _Level, rng, limit) -> tuple[_Level, list] | None:
    """Heavy-edge matching; returns (coarse level, fine -> coarse map) or None if it barely shrinks."""
    n = level.n
    order = list(range(n))
    rng.shuffle(order)
    match = [-1] * n
    for v in order:
        if match[v] >= 0:
            continue
        best, bw = v, 0
        wv = level.w[v]
        for u, wt in level.adj[v].items():
            if match[u] >= 0 or u == v:
                continue
            if any(wv[m] + level.w[u][m] > limit[m] for m in range(METRICS)):
                continue
            if wt > bw or (wt == bw and u < best):
                best, bw = u, wt
        match[v] = best
        match[best] = v
    cmap = [-1] * n
    nc = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    if nc > 0.9 * n:
        return None
    w = [[0] * METRICS for _ in range(nc)]
    adj: list = [dict() for _ in range(nc)]
    for v in range(n):
        cv = cmap[v]
        for m in range(METRICS):
            w[cv][m] += level.w[v][m]
        for u, wt in level.adj[v].items():
            cu = cmap[u]
            if cu != cv:
                adj[cv][cu] = adj[cv].get(cu, 0) + wt
    return _Level([tuple(x) for x in w], adj), cmap


def _grow(st: _State, rng, randomize: bool):
    """Region growing: fill shards 1..k-1 around a seed, the remainder goes to k."""
    g = st.g
    k = st.k
    free = set(range(g.n))
    deg = [sum(g.adj[v].values()) for v in range(g.n)]
    target = [c / 1.0 for c in st.caps]  # caps already include beta; aim for the mean below
    mean = [c for c in st.caps]
    for s in range(1, k):
        remaining_shards = k - s + 1
        # aim for an even share of what is left so later shards are not starved
        rem = [sum(g.w[v][m] for v in free) for m in range(METRICS)]
        goal = [rem[m] / remaining_shards for m in range(METRICS)]
        if not free:
            break
        pool = sorted(free, key=lambda v: (-deg[v], v))
        seed = pool[0] if not randomize else pool[rng.randrange(min(len(pool), 5))]
        gain: dict = {seed: 0}
        load = [0.0] * METRICS
        while gain:
            v = max(gain, key=lambda x: (gain[x], -x))
            wv = g.w[v]
            if any(load[m] + wv[m] > goal[m] * 1.02 + 1e-9 and load[m] > 0 for m in range(METRICS)):
                del gain[v]
                continue
            del gain[v]
            free.discard(v)
            st.place(v, s)
            for m in range(METRICS):
                load[m] += wv[m]
            if all(load[m] >= goal[m] for m in range(METRICS) if goal[m]):
                break
            for u, wt in g.adj[v].items():
                if u in free:
                    gain[u] = gain.get(u, 0) + wt
            if not gain and free and not all(load[m] >= goal[m] for m in range(METRICS)):
                # disconnected remainder: jump to the heaviest free vertex
                nxt = min(free, key=lambda x: (-deg[x], x))
                gain[nxt] = 0
    for v in sorted(free):
        st.place(v, k)
    del target, mean


def _repair(st: _State):
    """Moves that reduce total excess load, preferring cut-friendly ones.

    Excess deltas for every (vertex in an overloaded shard, destination) pair
    are evaluated with numpy using the same operation order as
    ``_State.move_excess``; ties are then broken in Python on the few
    near-minimal candidates.
    """
    g = st.g
    if not g.n:
        return
    W = np.asarray(g.w, dtype=float)
    caps = np.asarray(st.caps, dtype=float)
    live = caps > 0
    denom = np.where(live, caps, 1.0)

    def excess(L):
        e = np.where(live, np.maximum(0.0, L - caps) / denom, 0.0)
        out = e[..., 0]
        for m in range(1, METRICS):
            out = out + e[..., m]
        return out

    for _ in range(g.n * 2):
        if st.feasible():
            return
        over = np.array([False] + [st.ratio(s) > 1 + 1e-9 for s in range(1, st.k + 1)])
        assign = np.asarray(st.assign)
        cand = np.flatnonzero(over[assign])
        if not len(cand):
            return
        loads = np.asarray(st.loads, dtype=float)
        wc = W[cand]
        ls = loads[assign[cand]]
        ld = loads[1:]
        before = excess(ls)[:, None] + excess(ld)[None, :]
        after = excess(ls - wc)[:, None] + excess(ld[None, :, :] + wc[:, None, :])
        d = after - before
        d[np.arange(len(cand)), assign[cand] - 1] = np.inf
        dmin = d.min()
        if not dmin < -1e-12:
            # no single move helps: try exchanging a pair across shards
            if not _repair_swap(st, W, loads, assign, excess):
                return
            continue
        best = None
        for i, j in zip(*np.nonzero(d <= dmin + 1e-9)):
            dv = float(d[i, j])
            if dv >= -1e-12:
                continue
            v, dst = int(cand[i]), int(j) + 1
            c = st.conn(v)
            key = (round(dv, 12), -(c[dst] - c[st.assign[v]]), v, dst)
            if best is None or key < best:
                best = key
        st.place(best[2], best[3])


def _repair_swap(st: _State, W, loads, assign, excess, chunk=256) -> bool:
    """Apply an exchange (v in an overloaded shard, u elsewhere) that lowers
    total excess; False if none does. Needed when the metrics pull against
    each other (storage-heavy cold accounts vs activity-heavy hot ones).

    Among exchanges reaching at least half the best reduction, the one with
    the largest connectivity gain wins, so balance is bought cheaply.
    """
    cands = []  # (excess delta array, cut gain array, vs, U)
    dmin = 0.0
    for s in range(1, st.k + 1):
        if st.ratio(s) <= 1 + 1e-9:
            continue
        V = np.flatnonzero(assign == s)
        for t in range(1, st.k + 1):
            U = np.flatnonzero(assign == t)
            if t == s or not len(U):
                continue
            base = float(excess(loads[s]) + excess(loads[t]))
            gu = np.array([st.conn(int(u))[s] - st.conn(int(u))[t] for u in U], dtype=float)
            for i in range(0, len(V), chunk):
                vs = V[i:i + chunk]
                gv = np.array([st.conn(int(v))[t] - st.conn(int(v))[s] for v in vs], dtype=float)
                diff = W[vs][:, None, :] - W[U][None, :, :]  # v leaves s, u joins s
                d = excess(loads[s] - diff) + excess(loads[t] + diff) - base
                dmin = min(dmin, float(d.min()))
                cands.append((d, gv[:, None] + gu[None, :], vs, U))
    if not dmin < -1e-12:
        return False
    best = None
    for d, gain, vs, U in cands:
        score = np.where(d <= 0.5 * dmin, gain, -np.inf)
        j = int(np.argmax(score))
        if score.flat[j] > -np.inf and (best is None or score.flat[j] > best[0]):
            best = (float(score.flat[j]), int(vs[j // len(U)]), int(U[j % len(U)]))
    _, v, u = best
    sv, su = st.assign[v], st.assign[u]
    st.place(v, su)
    st.place(u, sv)
    return True


def _refine(st: _State, rng, max_passes=20, swap_limit=60):
    g = st.g
    for _ in range(max_passes):
        improved = False
        order = list(range(g.n))
        rng.shuffle(order)
        for v in order:
            src = st.assign[v]
            c = st.conn(v)
            best = None
            for dst in range(1, st.k + 1):
                if dst == src:
                    continue
                gain = c[dst] - c[src]
                if gain > 0 and st.fits(v, dst) and (best is None or gain > best[0]):
                    best = (gain, dst)
            if best is not None:
                st.place(v, best[1])
                improved = True
        a = st.assign
        boundary = [v for v in range(g.n) if any(a[u] != a[v] for u in g.adj[v])]
        if len(boundary) > swap_limit:
            # pair up only the vertices with the most to gain from leaving
            def pull(v):
                c = st.conn(v)
                return max(c[d] for d in range(1, st.k + 1) if d != a[v]) - c[a[v]]
            boundary = sorted(sorted(boundary, key=lambda v: (-pull(v), v))[:swap_limit])
        for i, v in enumerate(boundary):
            for u in boundary[i + 1:]:
                sv, su = a[v], a[u]
                if sv == su:
                    continue
                cv, cu = st.conn(v), st.conn(u)
                wvu = g.adj[v].get(u, 0)
                gain = (cv[su] - cv[sv]) + (cu[sv] - cu[su]) - 2 * wvu
                if gain > 0 and st.fits(v, su, out=u) and st.fits(u, sv, out=v):
                    st.place(v, su)
                    st.place(u, sv)
                    improved = True
        if not improved:
            return


def _base_level(graph) -> tuple[list, _Level, list]:
    names, w, totals = _weights(graph)
    index = {a: i for i, a in enumerate(names)}
    adj: list = [dict() for _ in names]
    for (a, b), wt in graph.edges.items():
        i, j = index[a], index[b]
        adj[i][j] = adj[i].get(j, 0) + wt
        adj[j][i] = adj[j].get(i, 0) + wt
    return names, _Level([w[a] for a in names], adj), totals


def _multilevel(base: _Level, k: int, caps, rng, randomize: bool) -> _State:
    levels = [base]
    maps = []
    limit = [c / 3.0 for c in caps]
    while levels[-1].n > max(30, 15 * k):
        out = _coarsen(levels[-1], rng, limit)
        if out is None:
            break
        levels.append(out[0])
        maps.append(out[1])
    st = _State(levels[-1], k, caps)
    _grow(st, rng, randomize)
    _repair(st)
    _refine(st, rng)
    for lvl in range(len(levels) - 2, -1, -1):
        fine = _State(levels[lvl], k, caps)
        cmap = maps[lvl]
        for v in range(levels[lvl].n):
            fine.place(v, st.assign[cmap[v]])
        st = fine
        _repair(st)
        _refine(st, rng)
    return st


def partition_graph(graph, k: int, beta: float = 1.25, seed: int = 0, restarts: int = 4) -> PartitionMap:
    """Heuristic balanced min-cut; raises InfeasibleBalance if no restart balances."""
    if k < 1:
        raise WorkloadError("k must be >= 1")
    if not graph.vertices:
        raise WorkloadError("empty graph")
    if k == 1:
        return PartitionMap({a: 1 for a in graph.vertices}, 1)
    if k > len(graph.vertices):
        raise InfeasibleBalance(f"k={k} exceeds the number of accounts ({len(graph.vertices)})")
    names, base, totals = _base_level(graph)
    caps = _caps(totals, k, beta)
    best = None
    for r in range(max(restarts, 1)):
        rng = random.Random(f"partition-{seed}-{r}")
        st = _multilevel(base, k, caps, rng, randomize=r > 0)
        if not st.feasible():
            continue
        cut = st.cut()
        if best is None or cut < best[0]:
            best = (cut, list(st.assign))
    if best is None:
        raise InfeasibleBalance(f"cannot balance {len(names)} accounts over k={k} within beta={beta}")
    return PartitionMap({a: best[1][i] for i, a in enumerate(names)}, k)


def initial_assignment(graph, k: int, beta: float = 1.25, seed: int = 0) -> dict:
    """Single-level growing plus balance repair, before any refinement."""
    names, base, totals = _base_level(graph)
    st = _State(base, k, _caps(totals, k, beta))
    _grow(st, random.Random(f"partition-{seed}-0"), False)
    _repair(st)
    return {a: st.assign[i] for i, a in enumerate(names)}


def refine_from(graph, k: int, assign: dict, beta: float = 1.25, seed: int = 0) -> dict:
    """Refinement alone, starting from ``assign``; never increases the cut."""
    names, base, totals = _base_level(graph)
    st = _State(base, k, _caps(totals, k, beta))
    for i, a in enumerate(names):
        st.place(i, assign[a])
    _refine(st, random.Random(f"partition-{seed}-0"))
    return {a: st.assign[i] for i, a in enumerate(names)}


def brute_force_min_cut(graph, k: int = 2, beta: float = 1.25):
    """Exhaustive balanced min-cut oracle (small graphs only). Returns (cut, assign) or None."""
    names = sorted(graph.vertices)
    if len(names) > 14:
        raise WorkloadError("brute force limited to 14 vertices")
    best = None
    # fix the first vertex in shard 1 to skip mirror images
    for rest in product(range(1, k + 1), repeat=len(names) - 1):
        assign = dict(zip(names, (1,) + rest))
        if not balanced(assign, graph, k, beta):
            continue
        cut = graph.cut(assign)
        if best is None or cut < best[0]:
            best = (cut, assign)
    return best


def cross_fraction(records, partition: PartitionMap) -> float:
    if not records:
        return 0.0
    n = sum(1 for r in records if len({partition.shard_of(a) for a in r.accounts}) > 1)
    return n / len(records)


def split_windows(records, n: int) -> list:
    """``n`` contiguous record windows in block order, as equal as block boundaries allow."""
    recs = sorted(records, key=lambda r: r.block)
    if n <= 1 or not recs:
        return [recs]
    out, start = [], 0
    for i in range(1, n + 1):
        end = round(i * len(recs) / n)
        while 0 < end < len(recs) and recs[end].block == recs[end - 1].block:
            end += 1
        if end > start:
            out.append(recs[start:end])
        start = end
    return out


def sweep_k(records, ks, beta: float = 1.25, seed: int = 0, graph=None, windows: int = 1) -> list[dict]:
    """Rows of k, cross_fraction and the 1/(k+1) target; cross_fraction is NaN
    where no balanced partition was found.

    With ``windows > 1`` the trace is cut into contiguous block windows, each
    window is partitioned on its own graph and the fractions are averaged.
    """
    from .workload import build_graph

    parts = [records] if windows <= 1 else split_windows(records, windows)
    graphs = [graph if graph is not None and windows <= 1 else build_graph(w) for w in parts]
    rows = []
    for k in ks:
        fracs = []
        for w, g in zip(parts, graphs):
            try:
                fracs.append(cross_fraction(w, partition_graph(g, k, beta, seed)))
            except InfeasibleBalance as e:
                log.warning("k=%d skipped: %s", k, e)
                fracs.append(float("nan"))
        rows.append({"k": k, "cross_fraction": sum(fracs) / len(fracs), "target": 1 / (k + 1)})
    return rows


def intersection(rows) -> float | None:
    """Smallest k (linearly interpolated) where cross_fraction reaches the target."""
    prev = None
    for row in rows:
        if math.isnan(row["cross_fraction"]):
            continue
        d = row["cross_fraction"] - row["target"]
        if d >= 0:
            if prev is None:
                return float(row["k"])
            pk, pd = prev
            return pk + (row["k"] - pk) * (-pd) / (d - pd)
        prev = (row["k"], d)
    return None


def write_partition(pm: PartitionMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["account", "shard"])
        for a in sorted(pm.assign):
            w.writerow([a, pm.assign[a]])


def read_partition(path, k: int | None = None) -> PartitionMap:
    """``account,shard`` CSV (header optional), e.g. converted Metis output."""
    assign = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "account":
                continue
            try:
                assign[row[0]] = int(row[1])
            except (IndexError, ValueError):
                raise WorkloadError(f"bad partition row {row!r}") from None
    if not assign:
        raise WorkloadError(f"{path}: empty partition")
    return PartitionMap(assign, k if k is not None else max(assign.values()))
