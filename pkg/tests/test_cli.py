import json
import subprocess
import sys

import pytest

from phenolens import __version__
from phenolens.cli import main
from phenolens.io import load_checkpoint, read_embeddings

TINY = {
    "seed": 11,
    "data": {"n_per_class": 5, "image_size": 8, "concentration_levels": [0.5, 1.0, 2.0]},
    "arch": {"hidden_dims": [16], "rep_dim": 8, "proj_hidden": None, "proj_dim": 4},
    "ssl": {"epochs": 2, "batch_size": 8, "warmup_epochs": 0},
    "probe": {"epochs": 5},
    "analysis": {"label_fractions": [0.5, 1.0], "holdout_label": "Dead"},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_command_is_usage_error(capsys):
    code, _, err = _run([], capsys)
    assert code == 2 and err.startswith("ERROR(usage):")


def test_unknown_argument_is_usage_error(capsys):
    code, _, err = _run(["embed", "--bogus"], capsys)
    assert code == 2 and err.startswith("ERROR(usage):")


def test_stagewise_workflow(tmp_path, tiny_config, capsys):
    data = tmp_path / "data"
    assert _run(["gen-data", "--config", tiny_config, "--out", data], capsys)[0] == 0
    assert (data / "samples.csv").exists()
    ckpt = tmp_path / "enc.ckpt"
    assert _run(["train", "--config", tiny_config, "--data", data, "--out", ckpt, "--quiet"], capsys)[0] == 0
    params = load_checkpoint(ckpt, kind="encoder")
    assert params.arch.input_dim == 64
    log = json.loads((tmp_path / "enc.ckpt.trainlog.json").read_text())
    assert len(log["epoch_loss"]) == 2
    emb = tmp_path / "emb.csv"
    assert _run(["embed", "--model", ckpt, "--data", data, "--out", emb], capsys)[0] == 0
    E = read_embeddings(emb)
    assert len(E) == 30 and E.dim == 8
    code, _, _ = _run(
        ["probe", "--train", emb, "--val", emb, "--test", emb, "--out", tmp_path / "p.ckpt",
         "--report", tmp_path / "probe.json", "--config", tiny_config],
        capsys,
    )
    assert code == 0
    report = json.loads((tmp_path / "probe.json").read_text())
    assert 0 <= report["test"]["accuracy"] <= 1
    code, _, _ = _run(
        ["analyze", "--embeddings", emb, "--centers-from", emb, "--report", tmp_path / "an.json",
         "--pca", tmp_path / "pca.csv"],
        capsys,
    )
    assert code == 0
    analysis = json.loads((tmp_path / "an.json").read_text())
    assert "mean_similarity" in analysis
    assert (tmp_path / "pca.csv").read_text().count("\n") == 31
    code, out, _ = _run(["drift", "--ref", emb, "--window", emb], capsys)
    assert code == 0 and 0 <= json.loads(out)["drift_score"] <= 2


def test_train_is_byte_idempotent(tmp_path, tiny_config, capsys):
    data = tmp_path / "data"
    _run(["gen-data", "--config", tiny_config, "--out", data], capsys)
    for name in ("a.ckpt", "b.ckpt"):
        assert _run(["train", "--config", tiny_config, "--data", data, "--out", tmp_path / name], capsys)[0] == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_run_is_byte_idempotent_and_seed_sensitive(tmp_path, tiny_config, capsys):
    reports = []
    for name, extra in (("a", []), ("b", []), ("c", ["--seed", "12"])):
        path = tmp_path / f"{name}.json"
        assert _run(["run", "--config", tiny_config, "--report", path, "--quiet", *extra], capsys)[0] == 0
        reports.append(path.read_bytes())
    assert reports[0] == reports[1]
    assert reports[0] != reports[2]
    doc = json.loads(reports[0])
    assert doc["novelty_holdout"]["holdout"] == "Dead"


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {}}))
    code, _, err = _run(["run", "--config", bad, "--report", tmp_path / "r.json"], capsys)
    assert code == 2 and err.startswith("ERROR(config):") and "seed" in err
    bad.write_text("{not json")
    code, _, err = _run(["run", "--config", bad, "--report", tmp_path / "r.json"], capsys)
    assert code == 2 and err.startswith("ERROR(")


def test_format_error_exit_code(tmp_path, capsys):
    fake = tmp_path / "fake.ckpt"
    fake.write_bytes(b"XXXX" + bytes(40))
    code, _, err = _run(["embed", "--model", fake, "--data", tmp_path, "--out", tmp_path / "e.csv"], capsys)
    assert code == 3 and err.startswith("ERROR(not-a-checkpoint):")
    csv_path = tmp_path / "bad.csv"
    csv_path.write_text("label,concentration,rep_0\n")
    code, _, err = _run(["drift", "--ref", csv_path, "--window", csv_path], capsys)
    assert code == 3 and "line 1" in err


def test_dimension_mismatch_is_data_error(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("id,label,concentration,rep_0,rep_1\nx,A,,1,0\ny,B,,0,1\n")
    b.write_text("id,label,concentration,rep_0\nx,A,,1\n")
    code, _, err = _run(["drift", "--ref", a, "--window", b], capsys)
    assert code == 3 and err.startswith("ERROR(")


def test_console_entry_point_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "phenolens.cli", "drift", "--ref", str(tmp_path / "x.csv"), "--window", "y"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 3
    assert proc.stderr.strip().startswith("ERROR(format):")
    assert "Traceback" not in proc.stderr
