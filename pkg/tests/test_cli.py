import json
import subprocess
import sys

import pytest

from atombench.baseline import pose_to_prediction
from atombench.cli import run
from atombench.dataset import DatasetConfig, generate_dataset, load_dataset_volumes
from atombench.predictions import Predictions, write_predictions


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["phantom", "--kind", "smooth-noise", "--count", "4", "--seed", "3", "--out", str(root / "vols")]) == 0
    args = ["generate", "--volumes", str(root / "vols"), "--mode", "easy", "--split", "vol",
            "--ratios", "0.6,0.2,0.2", "--slices-per-volume", "10", "--seed", "5"]
    assert run(args + ["--out", str(root / "ds")]) == 0
    assert run(args + ["--out", str(root / "ds2")]) == 0
    (root / "cfg.json").write_text(json.dumps({"d": 8, "heads": 2, "layers": 1, "epochs": 2}))
    return root


def test_prints_resolved_config(workspace, capsys):
    run(["phantom", "--kind", "shells", "--dims", "8,9,10", "--seed", "1", "--count", "1", "--out", str(workspace / "p")])
    first = capsys.readouterr().out.splitlines()[0]
    cfg = json.loads(first)
    assert cfg["command"] == "phantom" and cfg["dims"] == [8, 9, 10] and cfg["seed"] == 1
    assert len(list((workspace / "p").glob("*.bin"))) == 1


def test_generate_byte_identical(workspace):
    a, b = _files(workspace / "ds"), _files(workspace / "ds2")
    assert a.keys() == b.keys() and a == b
    manifest = json.loads((workspace / "ds" / "manifest.json").read_text())
    assert manifest["counts"] == {"train": 24, "val": 8, "test": 8}


def test_generate_downsamples_raw_volumes(tmp_path):
    assert run(["phantom", "--kind", "blobs", "--dims", "30,26,22", "--out", str(tmp_path / "v")]) == 0
    assert run(["generate", "--volumes", str(tmp_path / "v"), "--split", "vol", "--slices-per-volume", "10",
                "--out", str(tmp_path / "d")]) == 0
    vols = load_dataset_volumes(tmp_path / "d")
    assert vols[0].dims == (20, 20, 20) and vols[0].normalized


def test_train_predict_eval(workspace, capsys):
    ckpt = workspace / "m.ckpt"
    for out in (ckpt, workspace / "m2.ckpt"):
        code = run(["train", "--data", str(workspace / "ds"), "--config", str(workspace / "cfg.json"),
                    "--seed", "4", "--out", str(out)])
        assert code == 0
    assert ckpt.read_bytes() == (workspace / "m2.ckpt").read_bytes()
    curve = (workspace / "m.ckpt.loss.csv").read_text().splitlines()
    assert curve[0] == "epoch,coarse_loss,fine_loss" and len(curve) == 3
    assert run(["predict", "--data", str(workspace / "ds"), "--ckpt", str(ckpt), "--out", str(workspace / "p.bin")]) == 0
    assert run(["baseline", "--data", str(workspace / "ds"), "--out", str(workspace / "b.bin")]) == 0
    capsys.readouterr()
    code = run(["eval", "--data", str(workspace / "ds"), "--preds", f"{workspace / 'p.bin'},{workspace / 'b.bin'}",
                "--runs", "2", "--out", str(workspace / "r.json"), "--csv", str(workspace / "h.csv")])
    assert code == 0
    report = json.loads((workspace / "r.json").read_text())
    assert report["runs"] == 2 and report["counts"]["test"] == 8
    assert "high error" in capsys.readouterr().out
    assert len((workspace / "h.csv").read_text().splitlines()) == 1 + 2 * 8


def test_eval_oracle_is_perfect(workspace, capsys):
    from atombench.volume import list_volumes, load_volume

    vols = [load_volume(p) for p in list_volumes(workspace / "vols")]
    ds = generate_dataset(vols, DatasetConfig(slices_per_volume=10, split="vol", ratios=(0.6, 0.2, 0.2), master_seed=5))
    preds = Predictions.from_lists([pose_to_prediction(s.pose) for s in ds.test], 5, {"split": "test"})
    write_predictions(preds, workspace / "oracle.bin")
    capsys.readouterr()
    assert run(["eval", "--data", str(workspace / "ds"), "--preds", str(workspace / "oracle.bin"),
                "--out", str(workspace / "o.json")]) == 0
    report = json.loads((workspace / "o.json").read_text())
    assert report["high_error_mean"] == 100.0 and report["low_error_mean"] == 100.0
    assert "100.00" in capsys.readouterr().out


def test_train_empty_split(tmp_path, capsys):
    run(["phantom", "--kind", "blobs", "--count", "1", "--out", str(tmp_path / "v")])
    run(["generate", "--volumes", str(tmp_path / "v"), "--split", "none", "--slices-per-volume", "5",
         "--out", str(tmp_path / "d")])
    capsys.readouterr()
    assert run(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m")]) == 2
    assert "train split" in capsys.readouterr().err


def test_train_divergence_exit_3(workspace, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"d": 8, "heads": 2, "layers": 1, "epochs": 1, "lr": float("inf")}))
    assert run(["train", "--data", str(workspace / "ds"), "--config", str(tmp_path / "bad.json"),
                "--out", str(tmp_path / "m")]) == 3


def test_usage_errors(workspace, capsys):
    assert run(["train", "--data", "x", "--out", "y", "--bogus", "1"]) == 1
    assert run(["explode"]) == 1
    assert run(["predict", "--data", "x", "--ckpt", "y", "--out", "z", "--k", "0"]) == 1
    assert run(["generate", "--volumes", "v", "--ratios", "1,2", "--out", "o"]) == 1
    assert run(["eval", "--data", str(workspace / "ds"), "--preds", str(workspace / "b.bin"), "--runs", "3",
                "--out", "o.json"]) == 1
    err = capsys.readouterr().err
    assert "--bogus" in err and "--ratios" in err


def test_data_errors_name_file(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m")]) == 2
    assert "manifest" in capsys.readouterr().err
    (tmp_path / "cfg.json").write_text('{"widht": 3}')
    assert run(["train", "--data", str(tmp_path), "--config", str(tmp_path / "cfg.json"), "--out", "m"]) == 2
    assert "widht" in capsys.readouterr().err
    assert run(["generate", "--volumes", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_atom_threads(workspace, monkeypatch, capsys):
    monkeypatch.setenv("ATOM_THREADS", "3")
    run(["generate", "--volumes", str(workspace / "vols"), "--split", "vol", "--slices-per-volume", "10",
         "--ratios", "0.6,0.2,0.2", "--seed", "5", "--out", str(workspace / "ds3")])
    assert json.loads(capsys.readouterr().out.splitlines()[0])["workers"] == 3
    assert _files(workspace / "ds3") == _files(workspace / "ds")
    monkeypatch.setenv("ATOM_THREADS", "zero")
    assert run(["generate", "--volumes", str(workspace / "vols"), "--out", str(workspace / "ds4")]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "atombench", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "phantom" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "atombench", "train"], capture_output=True, text=True)
    assert bad.returncode == 1


def test_end_to_end_defaults(tmp_path):
    # every flag not listed is left at its default
    steps = [
        ["phantom", "--kind", "shells", "--out", str(tmp_path / "v")],
        ["generate", "--volumes", str(tmp_path / "v"), "--out", str(tmp_path / "d")],
        ["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.ckpt")],
        ["predict", "--data", str(tmp_path / "d"), "--ckpt", str(tmp_path / "m.ckpt"), "--out", str(tmp_path / "p.bin")],
        ["eval", "--data", str(tmp_path / "d"), "--preds", str(tmp_path / "p.bin"), "--out", str(tmp_path / "r.json")],
    ]
    assert [run(s) for s in steps] == [0] * 5
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["counts"] == {"train": 1216, "val": 152, "test": 152}
