import json
from pathlib import Path

import pytest

import perfcrd
from perfcrd import cli
from perfcrd.config import ConfigError, ExperimentConfig, content_version
from perfcrd.training import TrainingDiverged

CONFIGS = Path(perfcrd.__file__).parent / "configs"


def load(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def summary(path):
    return json.loads((path / "summary.json").read_text())["summary"]


def tiny_train(epochs=3):
    obj = load("fig3-T0.5-welfare")
    obj["graph"] = {"generator": "scale_free", "n": 6, "attach_m": 1, "seed": 0}
    obj["agents"]["horizon"] = 4
    obj["predictor"]["hidden"] = 8
    obj["train"].update(epochs=epochs, eval_every=1)
    return obj


def test_bundled_configs_cover_every_figure():
    names = {p.stem for p in CONFIGS.glob("*.json")}
    for prefix in ("fig1", "fig2", "fig3-T0.2", "fig3-sweep", "fig4-gnn", "appC-", "appF-", "gradcheck"):
        assert any(n.startswith(prefix) for n in names), prefix
    for p in CONFIGS.glob("*.json"):
        ExperimentConfig.load(p)


def test_analyze_fig1(tmp_path):
    assert cli.main(["analyze", "--config", str(CONFIGS / "fig1.json"), "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert s["self_fulfilling"] == 4
    assert s["self_fulfilling_set"] == ["000", "011", "101", "110"]
    assert s["self_fulfilling_full_success"] and not s["trade_off"]
    assert s["theorem1"] == {"condition": "clique", "verified": True, "witness": "110"}


def test_analyze_fig2(tmp_path):
    assert cli.main(["analyze", "--config", str(CONFIGS / "fig2.json"), "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert s["trade_off"] and s["self_fulfilling_set"] == ["000"]
    assert s["best_welfare"]["induced"] == "111"


@pytest.mark.parametrize("name", sorted(p.stem for p in CONFIGS.glob("appF-*.json")))
def test_analyze_hub_variants(tmp_path, name):
    assert cli.main(["analyze", "--config", str(CONFIGS / f"{name}.json"), "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert s["full_success_attainable"] is False and s["hub_condition"] is True
    assert s["blocking_hubs"] == [0]


def test_outputs_carry_provenance(tmp_path):
    cfg = ExperimentConfig.load(CONFIGS / "fig1.json")
    cli.main(["analyze", "--config", str(CONFIGS / "fig1.json"), "--out", str(tmp_path)])
    head = (tmp_path / "prophecies.csv").read_text().splitlines()[0]
    assert head.startswith("# ") and f"config_hash={cfg.config_hash}" in head
    assert f"content_version={content_version()}" in head and "master_seed=0" in head
    meta = json.loads((tmp_path / "summary.json").read_text())["meta"]
    assert meta["config_hash"] == cfg.config_hash


def test_config_hash_ignores_out_but_not_seed():
    a = ExperimentConfig.from_dict({**load("fig1"), "out": "x"})
    b = ExperimentConfig.from_dict({**load("fig1"), "out": "y"})
    c = ExperimentConfig.from_dict(load("fig1"), seed=4)
    assert a.config_hash == b.config_hash != c.config_hash


@pytest.mark.parametrize("mutate, msg", [
    (lambda o: o.update(colour="red"), "unknown config keys"),
    (lambda o: o.pop("graph"), "graph"),
    (lambda o: o["game"].update(T="3/2"), "invalid config"),
    (lambda o: o.update(predictor={"architecture": "transformer"}), "architecture"),
    (lambda o: o.update(train={"objective": "profit"}), "objective"),
    (lambda o: o.update(sweep={"lambdas": [0, 2]}), "lambdas"),
])
def test_config_errors(tmp_path, capsys, mutate, msg):
    obj = load("fig1")
    mutate(obj)
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig.from_dict(obj)
    assert cli.main(["analyze", "--config", write(tmp_path, obj), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unreadable_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert cli.main(["analyze", "--config", str(bad)]) == 2
    assert cli.main(["analyze", "--config", str(tmp_path / "missing.json")]) == 2


def test_cap_requires_force(tmp_path, capsys):
    obj = {"name": "big", "graph": {"generator": "path", "n": 21}, "game": load("fig1")["game"]}
    assert cli.main(["analyze", "--config", write(tmp_path, obj), "--out", str(tmp_path)]) == 2
    assert "cap" in capsys.readouterr().err


def test_gradcheck_default_passes(tmp_path):
    assert cli.main(["gradcheck", "--config", str(CONFIGS / "gradcheck.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())["report"]
    assert rep["passed"]
    for name in ("ce", "uc", "upop"):
        assert rep["losses"][name]["max_rel_error"] < 1e-4
    assert rep["decomposition"]["uc_max_abs_error"] < 1e-10
    assert (tmp_path / "decomposition.csv").exists()


def test_gradcheck_shallow_passes(tmp_path):
    assert cli.main(["gradcheck", "--config", str(CONFIGS / "gradcheck-h1.json"), "--out", str(tmp_path)]) == 0


def test_gradcheck_corrupted_primitive_fails(tmp_path, capsys):
    code = cli.main(["gradcheck", "--config", str(CONFIGS / "gradcheck-corrupt.json"), "--out", str(tmp_path)])
    assert code == 3
    err = capsys.readouterr().err
    assert "failing coordinates" in err and "uc: [" in err
    assert json.loads((tmp_path / "gradcheck.json").read_text())["report"]["passed"] is False


def test_train_then_rollout(tmp_path):
    out = tmp_path / "train"
    assert cli.main(["train", "--config", write(tmp_path, tiny_train()), "--out", str(out)]) == 0
    for f in ("history.csv", "trace.csv", "checkpoint.json", "result.json"):
        assert (out / f).exists()
    hist = (out / "history.csv").read_text().splitlines()
    assert hist[1].startswith("epoch,") and len(hist) == 2 + 4
    final = json.loads((out / "result.json").read_text())["final"]
    obj = tiny_train()
    obj["rollout"] = {"checkpoint": str(out / "checkpoint.json")}
    assert cli.main(["rollout", "--config", write(tmp_path, obj, "ro.json"), "--out", str(tmp_path / "ro")]) == 0
    m = json.loads((tmp_path / "ro" / "metrics.json").read_text())["metrics"]
    assert m["accuracy"] == final["accuracy"] and m["welfare"] == final["welfare"]
    trace = (tmp_path / "ro" / "trace.csv").read_text().splitlines()
    assert trace[1:] == (out / "trace.csv").read_text().splitlines()[1:]


def test_rollout_static_prediction(tmp_path):
    obj = load("fig1")
    obj["agents"] = {"tau0": 1.0, "horizon": 3}
    obj["rollout"] = {"prediction": "110"}
    assert cli.main(["rollout", "--config", write(tmp_path, obj), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())["metrics"]
    assert m["accuracy"] == 1.0 and m["success_fraction"] == 1.0


def test_divergence_keeps_partial_history(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise TrainingDiverged(3, [{"epoch": 0, "loss": 1.0}], "non-finite loss or gradient")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--config", write(tmp_path, tiny_train()), "--out", str(tmp_path)]) == 3
    assert "diverged at epoch 3" in capsys.readouterr().err
    assert json.loads((tmp_path / "result.json").read_text())["status"] == "diverged"
    assert len((tmp_path / "history.csv").read_text().splitlines()) == 3


def test_seed_override_changes_outputs(tmp_path):
    path = write(tmp_path, tiny_train(2))
    cli.main(["train", "--config", path, "--out", str(tmp_path / "a")])
    cli.main(["train", "--config", path, "--out", str(tmp_path / "b"), "--seed", "1"])
    a = (tmp_path / "a" / "checkpoint.json").read_text()
    b = (tmp_path / "b" / "checkpoint.json").read_text()
    assert a != b
    assert "master_seed=1" in (tmp_path / "b" / "history.csv").read_text().splitlines()[0]


def test_sweep_small_grid(tmp_path):
    obj = tiny_train(1)
    obj["sweep"] = {"lambdas": [0.0, 0.5, 1.0], "seeds": [0, 1], "mgda_seeds": [0]}
    assert cli.main(["sweep", "--config", write(tmp_path, obj), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 2 + 7
    assert len(list((tmp_path / "checkpoints").glob("*.json"))) == 7
    front = json.loads((tmp_path / "sweep.json").read_text())["front"]
    accs = [p["accuracy"] for p in front]
    assert accs == sorted(accs)


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "perfcrd", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "analyze" in r.stdout
