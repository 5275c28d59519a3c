import csv
import json

import pytest

from rivet import cli, harness
from rivet.core import ConfigError
from rivet.harness import ExperimentConfig

from conftest import SMALL

TINY = {"synthetic": {"accounts": 300, "records": 2000, "zipf": 0.8, "communities": 2, "seed": 3}}


def _cfg(**kw):
    base = dict(k=2, f=1, horizon_blocks=6, warmup=2, workload=TINY, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_yaml_round_trip(tmp_path):
    cfg = _cfg(faults={"preset": "tamper"}, async_windows=[[3, 9]])
    p = tmp_path / "c.yaml"
    p.write_text(cfg.to_yaml())
    back = ExperimentConfig.from_yaml(p)
    assert back == cfg and back.digest() == cfg.digest()
    assert back.async_windows == [[3.0, 9.0]]


def test_digest_tracks_every_field():
    a = _cfg()
    assert a.digest() == _cfg().digest()
    assert a.digest() != _cfg(seed=2).digest()
    assert a.digest() != _cfg(workload={"synthetic": dict(SMALL)}).digest()


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"protocl": "rivet"})
    with pytest.raises(ConfigError):
        _cfg(protocol="pbft")
    with pytest.raises(ConfigError):
        _cfg(horizon_blocks=2, warmup=3)
    with pytest.raises(ConfigError):
        _cfg(faults={"preset": "nope"}).fault_script()
    with pytest.raises(ConfigError):
        _cfg(faults={"crash": [[1, 0, 0], [1, 1, 0]]}).fault_script().validate(_cfg().run_config().shard_config())


def test_run_save_load_recompute(tmp_path):
    out = harness.run_experiment(_cfg(), tmp_path)
    d = out.run_dir
    for name in ("config.yaml", "partition.csv", "views.json", "events.jsonl", "metrics.csv", "samples.csv", "scan.json",
                 "chain/reference.jsonl", "chain/shard1.jsonl"):
        assert (d / name).exists(), name
    fresh = harness.recompute(d)
    saved = harness.read_metrics(d)
    assert {k: harness._fmt(v) for k, v in fresh.summary.items()} == saved
    assert harness.scan_dir(d) == []
    assert json.loads((d / "scan.json").read_text()) == []


def test_cli_run_scan_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(harness.RUNS_ENV, str(tmp_path))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(_cfg().to_yaml())
    assert cli.main(["run", "--config", str(cfg), "--protocol", "tpc"]) == 0
    out = capsys.readouterr().out
    run_dir = [l.split(",", 1)[1] for l in out.splitlines() if l.startswith("run_dir,")][0]
    assert "violations,0" in out and run_dir.startswith(str(tmp_path))
    assert cli.main(["scan", run_dir]) == 0
    assert "0 violations" in capsys.readouterr().out
    assert cli.main(["report", run_dir]) == 0
    # tampering with the saved metrics is noticed
    mp = f"{run_dir}/metrics.csv"
    rows = list(csv.reader(open(mp)))
    rows[1][1] = "12345"
    with open(mp, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert cli.main(["report", run_dir]) == 1


def test_cli_rerun_is_byte_identical(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(harness.RUNS_ENV, str(tmp_path))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(_cfg().to_yaml())
    cli.main(["run", "--config", str(cfg)])
    first = capsys.readouterr().out
    run_dir = next(tmp_path.glob("rivet-*"))
    blobs = {p.name: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
    cli.main(["run", "--config", str(cfg)])
    assert capsys.readouterr().out == first
    assert {p.name: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()} == blobs


def test_cli_grid_and_report(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(_cfg(horizon_blocks=4, warmup=1).to_yaml())
    out = tmp_path / "g"
    code = cli.main(["grid", "--config", str(cfg), "--runs-dir", str(tmp_path / "runs"), "--birs", "2",
                     "--injects", "50,100", "--workers", "1", "--out", str(out)])
    assert code == 0
    rows = harness.read_rows(out / "grid.csv")
    assert len(rows) == 4 and {r["protocol"] for r in rows} == {"rivet", "tpc"}
    for name in ("latency.csv", "output.csv", "commit.csv"):
        assert (out / name).exists()
    capsys.readouterr()
    assert cli.main(["report", str(out / "grid.csv"), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "latency.csv").read_bytes() == (out / "latency.csv").read_bytes()


def test_cli_trace_tools(tmp_path, capsys):
    t = tmp_path / "t.jsonl"
    assert cli.main(["gen-trace", "--accounts", "200", "--records", "800", "--communities", "3", "--seed", "2",
                     "--out", str(t)]) == 0
    assert cli.main(["partition", "--trace", str(t), "--k", "3", "--out", str(tmp_path / "p.csv"),
                     "--stats", str(tmp_path / "stats")]) == 0
    assert (tmp_path / "stats" / "pair_matrix.csv").exists()
    capsys.readouterr()
    assert cli.main(["sweep-k", "--trace", str(t), "--kmin", "1", "--kmax", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "k,cross_fraction,target" and len(lines) == 5
    assert lines[1].startswith("1,0.0,0.5")


def test_cli_errors_exit_2(tmp_path, capsys):
    assert cli.main(["partition", "--trace", str(tmp_path / "missing"), "--k", "2", "--out", "x"]) == 2
    bad = tmp_path / "c.yaml"
    bad.write_text("protocol: rivet\nbogus: 1\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err
