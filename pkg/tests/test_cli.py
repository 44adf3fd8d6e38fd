import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from sharedenc import cli
from sharedenc.errors import DivergenceError

TINY = """
[train]
steps = 4
batch_size = 8
seed = 0
[model]
d = 16
n_heads = 2
identifier = vector
layers_shared = 1
[data]
size = 60
"""

SPEC = """
[experiment]
baseline = disjoint
seeds = 0, 1
k = 1, 5
[train]
steps = 3
batch_size = 8
[model]
d = 16
n_heads = 2
[data]
size = 60
[arm.disjoint]
layers_early = 1
layers_shared = 0
[arm.shared]
layers_shared = auto
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_missing_config(tmp_path, capsys):
    assert run("train", "--config", tmp_path / "nope.ini", "--out", tmp_path / "o") == 2
    assert "not found" in capsys.readouterr().err


def test_bad_field_reports_field(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[train]\nsteps = lots\n")
    assert run("train", "--config", path, "--out", tmp_path / "o") == 2
    assert "steps" in capsys.readouterr().err


def test_train_writes_artifacts(tiny, tmp_path):
    out = tmp_path / "run"
    assert run("train", "--config", tiny, "--out", out) == 0
    for name in ("checkpoint.ckpt", "loss_trace.csv", "manifest.json", "metrics.jsonl"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 16
    assert manifest["config"]["model"]["d_m"] is not None  # defaults materialised
    assert len((out / "loss_trace.csv").read_text().splitlines()) == 5


def test_train_is_deterministic(tiny, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--config", tiny, "--out", tmp_path / name) == 0
    for f in ("metrics.jsonl", "loss_trace.csv", "checkpoint.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_changes_run(tiny, tmp_path):
    run("train", "--config", tiny, "--out", tmp_path / "a")
    run("train", "--config", tiny, "--seed", 5, "--out", tmp_path / "b")
    assert (tmp_path / "a/loss_trace.csv").read_text() != (tmp_path / "b/loss_trace.csv").read_text()
    assert json.loads((tmp_path / "b/manifest.json").read_text())["seed"] == 5


def test_manifest_reproduces_metrics(tiny, tmp_path):
    run("train", "--config", tiny, "--out", tmp_path / "a")
    assert run("train", "--config", tmp_path / "a/manifest.json", "--out", tmp_path / "b") == 0
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()


def test_eval_six_values_and_matches_training_eval(tiny, tmp_path, capsys):
    out = tmp_path / "run"
    run("train", "--config", tiny, "--out", out)
    capsys.readouterr()
    assert run("eval", "--checkpoint", out / "checkpoint.ckpt", "--k", "1,5,10") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6
    evaluated = [json.loads(l) for l in (out / "eval_test.jsonl").read_text().splitlines()]
    trained = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    key = lambda r: (r["direction"], r["k"])
    assert {key(r): r["recall"] for r in evaluated} == {key(r): r["recall"] for r in trained}


def test_eval_truncated_checkpoint(tiny, tmp_path):
    out = tmp_path / "run"
    run("train", "--config", tiny, "--out", out)
    ckpt = out / "checkpoint.ckpt"
    ckpt.write_bytes(ckpt.read_bytes()[:100])
    assert run("eval", "--checkpoint", ckpt) == 4


def test_eval_bad_k(tiny, tmp_path):
    out = tmp_path / "run"
    run("train", "--config", tiny, "--out", out)
    assert run("eval", "--checkpoint", out / "checkpoint.ckpt", "--k", "1,x") == 2


def test_divergence_exit_code(tiny, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError(3, float("nan"))
    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--config", tiny, "--out", tmp_path / "o") == 3


def test_compare_two_arms_two_seeds(tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text(SPEC)
    out = tmp_path / "cmp"
    assert run("compare", "--spec", spec, "--out", out, "--save-checkpoints") == 0
    records = [json.loads(l) for l in (out / "records.jsonl").read_text().splitlines()]
    assert len({(r["arm"], r["seed"]) for r in records}) == 4
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "arm,seed,fraction,params,direction,k,recall"
    assert len(list((out / "checkpoints").glob("*.ckpt"))) == 4
    assert (out / "relative_diff.csv").exists() and (out / "manifest.json").exists()


def test_compare_mismatched_budget(tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text(SPEC.replace("layers_shared = auto", "layers_shared = 4"))
    out = tmp_path / "cmp"
    assert run("compare", "--spec", spec, "--out", out, "--save-checkpoints") == 2
    assert not (out / "checkpoints").exists()
    assert not (out / "records.jsonl").exists()


def test_sweep_fractions(tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text(SPEC.replace("seeds = 0, 1", "seeds = 0"))
    out = tmp_path / "sw"
    assert run("sweep", "--spec", spec, "--out", out) == 0
    rows = (out / "metrics.csv").read_text().splitlines()[1:]
    assert {float(r.split(",")[2]) for r in rows} == {1.0, 0.5, 0.25}


def test_out_from_environment(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("SHAREDENC_OUT", str(tmp_path / "envout"))
    assert run("train", "--config", tiny) == 0
    assert (tmp_path / "envout/manifest.json").exists()


def test_export_data(tmp_path):
    assert run("export-data", "--n", 5, "--out", tmp_path / "d") == 0
    assert len(list((tmp_path / "d/images").iterdir())) == 5


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sharedenc", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "sharedenc" in proc.stdout
