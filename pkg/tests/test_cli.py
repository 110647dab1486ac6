import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from pasturefuse.autodiff import ConfigurationError
from pasturefuse.cli import main
from pasturefuse.config import load_config, parse_config
from pasturefuse.data import load_manifest
from pasturefuse.experiment import result_schema, strip_wall_time
from pasturefuse.metrics import aggregate_folds

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TINY = CONFIGS / "tiny.toml"


# -- config ----------------------------------------------------------------

def test_all_shipped_configs_parse():
    for p in CONFIGS.glob("*.toml"):
        cfg = load_config(p)
        assert cfg.fusion.d_model == cfg.backbone.d_model


def test_config_strictness():
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_config("seed = 1\nbogus = 2\n")
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_config("[train]\nlr = 0.1\n")
    with pytest.raises(ConfigurationError, match="expected int"):
        parse_config('seed = "17"\n')
    with pytest.raises(ConfigurationError):
        parse_config('[fusion]\nkind = "lstm"\n')
    cfg = parse_config("format_version = 2\n")
    with pytest.raises(ConfigurationError, match="format_version"):
        cfg.validate()


def test_config_int_promoted_to_float():
    assert parse_config("[train]\nlr_task = 1\n").train.lr_task == 1.0


def test_config_manifest_paths(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "ds")]) == 0
    (tmp_path / "c.toml").write_text('[dataset]\nsource = "manifest"\nmanifest = "ds/manifest.csv"\n'
                                     'vocab = "ds/vocab.json"\n')
    cfg = load_config(tmp_path / "c.toml")
    assert Path(cfg.dataset.manifest).is_file()
    (tmp_path / "d.toml").write_text('[dataset]\nsource = "manifest"\nmanifest = "nope.csv"\n')
    with pytest.raises(ConfigurationError, match="does not exist"):
        load_config(tmp_path / "d.toml")


# -- synth / splits ------------------------------------------------------------

@pytest.fixture(scope="module")
def synth357(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth357")
    spec = root / "spec.toml"
    spec.write_text("[synth]\nn = 357\nheight = 16\nwidth = 32\nseed = 17\n")
    assert main(["synth", str(spec), "--out", str(root / "a")]) == 0
    assert main(["synth", str(spec), "--out", str(root / "b")]) == 0
    return root


def test_synth_outputs(synth357):
    a, b = synth357 / "a", synth357 / "b"
    assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
    records = load_manifest(a / "manifest.csv")
    assert len(records) == 357
    assert all(not r.targets.composition_errors() for r in records)
    assert len(list((a / "images").glob("*.png"))) == 357


def test_splits_cli(synth357, capsys):
    m = str(synth357 / "a" / "manifest.csv")
    out1, out2 = synth357 / "f1.csv", synth357 / "f2.csv"
    assert main(["splits", m, "--seed", "17", "--out", str(out1)]) == 0
    text = capsys.readouterr().out
    assert main(["splits", m, "--seed", "17", "--out", str(out2), "--workers", "5"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "image_id,fold" and len(lines) == 358
    sizes = sorted(int(row.split()[1]) for row in text.splitlines()[2:7])
    assert sizes == [71, 71, 71, 72, 72]


def test_splits_duplicate_group(tmp_path):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "manifest.csv").read_text().splitlines()
    dup = text[5].replace(text[5].split(",")[1], "images/dup.png", 1)
    (tmp_path / "manifest.csv").write_text("\n".join(text + [dup]) + "\n")
    assert main(["splits", str(tmp_path / "manifest.csv"), "--out", str(tmp_path / "f.csv")]) == 0
    gid = text[5].split(",")[0]
    rows = [r for r in (tmp_path / "f.csv").read_text().splitlines() if r.startswith(gid + ",")]
    assert len(rows) == 1


def test_splits_bad_manifest(tmp_path, capsys):
    bad = tmp_path / "m.csv"
    bad.write_text("image_id,oops\n")
    assert main(["splits", str(bad), "--out", str(tmp_path / "f.csv")]) != 0
    assert "line 1" in capsys.readouterr().err


# -- params --------------------------------------------------------------------

def test_params_cli(capsys):
    assert main(["params"]) == 0
    out = capsys.readouterr().out
    total = [l for l in out.splitlines() if l.startswith("task-specific total")]
    assert total and "(5.79M)" in total[0]
    assert "identity x2" in out and "MISMATCH" not in out
    for label in ("(4.21M)", "(10.50M)", "(17.53M)", "(13.32M)", "(1.58M)"):
        assert label in out


def test_params_mismatch_exit(monkeypatch):
    from pasturefuse import fusion
    monkeypatch.setattr(fusion.GatedDWConvBlock, "count", staticmethod(lambda cfg: 1))
    assert main(["params", "--kind", "gated_dwconv", "--d-model", "16", "--head-hidden", "4"]) == 1


# -- run -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    codes = [main(["run", "--config", str(TINY), "--out", str(root / name), "--quiet", "--workers", w])
             for name, w in (("a", "1"), ("b", "1"), ("c", "2"))]
    assert codes == [0, 0, 0]
    return root


def _result(path):
    return json.loads((path / "result.json").read_text())


def test_run_outputs_and_schema(tiny_runs):
    res = _result(tiny_runs / "a")
    jsonschema.validate(res, result_schema())
    for name in ("curves.csv", "folds.csv", "fold_0.npz", "fold_1.npz", "fold_0.json"):
        assert (tiny_runs / "a" / name).is_file()
    header = (tiny_runs / "a" / "curves.csv").read_text().splitlines()[0]
    assert header == "fold,epoch,train_loss,val_weighted_r2,lr_backbone,lr_task"


def test_run_aggregate_recomputable(tiny_runs):
    res = _result(tiny_runs / "a")
    vals = [f["weighted_r2"] for f in res["folds"]]
    mean = math.fsum(vals) / len(vals)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
    assert abs(res["aggregate"]["mean"] - mean) <= 1e-12
    assert abs(res["aggregate"]["std"] - std) <= 1e-12
    for f in res["folds"]:
        w = np.array([0.1, 0.1, 0.1, 0.2, 0.5])
        assert abs(f["weighted_r2"] - float(w @ np.array(f["per_target_r2"]))) <= 1e-12


def test_run_deterministic_and_worker_independent(tiny_runs):
    a, b, c = (strip_wall_time(_result(tiny_runs / n)) for n in "abc")
    assert a == b == c
    for name in ("curves.csv", "folds.csv", "fold_0.npz", "fold_1.npz"):
        assert (tiny_runs / "a" / name).read_bytes() == (tiny_runs / "c" / name).read_bytes()


def test_run_checkpoint_reloads(tiny_runs):
    from pasturefuse.model import model_from_checkpoint
    m = model_from_checkpoint(tiny_runs / "a" / "fold_0.npz")
    assert m.num_parameters() > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_partial_nonzero(tmp_path):
    cfg = TINY.read_text().replace("lr_task = 2e-3", "lr_task = 1e300\nlr_backbone = 1e300")
    (tmp_path / "bad.toml").write_text(cfg)
    assert main(["run", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    res = _result(tmp_path / "o")
    assert res["status"] == "partial"
    jsonschema.validate(res, result_schema())


def test_run_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PASTUREFUSE_OUT", str(tmp_path))
    cfg = TINY.read_text().replace("n_folds = 2", "n_folds = 2\nfolds = [1]")
    (tmp_path / "one.toml").write_text(cfg)
    assert main(["run", "--config", str(tmp_path / "one.toml"), "--quiet", "--precision", "f32"]) == 0
    res = _result(tmp_path / "experiment")
    assert [f["fold"] for f in res["folds"]] == [1] and res["aggregate"] is None
    assert res["config"]["precision"] == "f32"


def test_run_needs_config(capsys):
    assert main(["run"]) == 2


# -- features / grad-check -----------------------------------------------------------

def test_features_cli(synth357, tmp_path):
    m = str(synth357 / "a" / "manifest.csv")
    assert main(["features", m, "--out", str(tmp_path)]) == 0
    corr = (tmp_path / "correlations.csv").read_text().splitlines()
    assert corr[0] == "feature,target,rho,n,error" and len(corr) == 16
    feats = (tmp_path / "features.csv").read_text().splitlines()
    assert len(feats) == 358


def test_features_unreadable_image(synth357, tmp_path):
    import shutil
    src = synth357 / "a"
    dst = tmp_path / "ds"
    shutil.copytree(src, dst)
    victim = sorted((dst / "images").glob("*.png"))[0]
    victim.write_bytes(b"not a png")
    assert main(["features", str(dst / "manifest.csv"), "--out", str(tmp_path / "o")]) == 1
    rows = (tmp_path / "o" / "features.csv").read_text().splitlines()
    assert len(rows) == 358 and any(victim.stem in r and "Error" in r for r in rows)
    corr = (tmp_path / "o" / "correlations.csv").read_text().splitlines()
    assert all(",356," in r for r in corr[1:])


def test_grad_check_cli(capsys):
    assert main(["grad-check", "--no-model"]) == 0
    out = capsys.readouterr().out
    assert "0 failed" in out
