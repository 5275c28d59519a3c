import pytest

from rivet.core import GLOBAL, Instr, Key, PartitionMap, PayloadProgram, CrossShardTx


@pytest.fixture
def pm2():
    # accounts a0..a3 on shard 1, b0..b3 on shard 2
    return PartitionMap({**{f"a{i}": 1 for i in range(4)}, **{f"b{i}": 2 for i in range(4)}}, 2)


def transfer(src: Key, dst: Key, amount: int, tag=GLOBAL) -> PayloadProgram:
    return PayloadProgram((
        Instr("LOAD", 0, src), Instr("SUB", 0, imm=amount), Instr("ASSERT", 0), Instr("STORE", 0, src),
        Instr("LOAD", 1, dst), Instr("ADD", 1, imm=amount), Instr("STORE", 1, dst),
    ), tag)


def make_transfer(src, dst, amount, pm, nonce=0):
    return CrossShardTx.create({src, dst}, {src, dst}, transfer(src, dst, amount), pm, nonce)


SMALL = {"accounts": 400, "records": 3000, "zipf": 0.8, "communities": 2, "seed": 2}
_runs: dict = {}


def small_run(protocol="rivet", seed=5, horizon=10, **kw):
    """A k=2, f=1 simulation on a small trace, memoised per argument set."""
    from rivet.harness import ExperimentConfig, run_experiment

    key = (protocol, seed, horizon, repr(sorted(kw.items())))
    if key not in _runs:
        cfg = ExperimentConfig(protocol=protocol, k=2, f=1, seed=seed, horizon_blocks=horizon, warmup=2,
                               workload={"synthetic": dict(SMALL)}, **kw)
        _runs[key] = run_experiment(cfg, write=False)
    return _runs[key]


# eight accounts, six transactions: tx5 = {a6, a7, a8}, tx6 = {a6, a7} (so edge
# (a6, a7) has weight 2) and a4 sits in tx2, tx3 and tx4
FIG_TXS = [["a1", "a2", "a3"], ["a2", "a4"], ["a3", "a4"], ["a4", "a5", "a6"], ["a6", "a7", "a8"], ["a6", "a7"]]


def _rec(i, accs):
    from rivet.workload import TraceRecord
    return TraceRecord(f"t{i}", 0, tuple(accs), tuple((a, 0) for a in accs), tuple((a, 0) for a in accs[:1]))


def fig_graph():
    from rivet.workload import build_graph
    return build_graph([_rec(i, a) for i, a in enumerate(FIG_TXS)])


def random_small_graphs(n=20, seed="bf"):
    """``n`` seeded interaction graphs with 4..10 vertices."""
    import random
    from rivet.workload import build_graph

    rng = random.Random(seed)
    out = []
    while len(out) < n:
        names = [f"v{i}" for i in range(rng.randint(5, 10))]
        recs = [_rec(j, rng.sample(names, rng.choice([1, 2, 2, 3]))) for j in range(rng.randint(len(names), 2 * len(names)))]
        g = build_graph(recs)
        if len(g.vertices) >= 4:
            out.append(g)
    return out


# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}: {detail}")
