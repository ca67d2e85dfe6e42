import json
import subprocess
import sys

import pytest

from knocknet.cli import main
from knocknet.nn import load_model


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "240", "--seed", "7", "--out", str(out)]) == 0
    return out


def data_args(d):
    return ["--cycles", str(d / "cycles.csv"), "--labels", str(d / "labels.csv")]


def test_synth_single_engine(tmp_path):
    assert main(["synth", "--bore-mm", "145", "--n", "50", "--seed", "7", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["subcommand"] == "synth"
    rows = (tmp_path / "labels.csv").read_text().strip().splitlines()
    assert rows[0].startswith("cycle_id") and len(rows) == 1 + 50
    assert (tmp_path / "config.json").exists()


def test_synth_is_deterministic(tmp_path, data_dir):
    assert main(["synth", "--n", "240", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("cycles.csv", "labels.csv", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_synth_invalid_bore(tmp_path, capsys):
    assert main(["synth", "--bore-mm", "0", "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def cnn_model(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", *data_args(data_dir), "--variant", "d", "--epochs", "2", "--out", str(out)]) == 0
    return out


def test_train_variant_d(cnn_model):
    assert load_model(cnn_model / "model.knet").kernel_size == 11
    report = json.loads((cnn_model / "train_report.json").read_text())
    assert report["stop_epoch"] == 2
    assert "kernel 11" in (cnn_model / "train_report.txt").read_text()


def test_kernel_flag_equals_variant(data_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", *data_args(data_dir), "--variant", "c", "--epochs", "1", "--out", str(a)]) == 0
    assert main(["train", *data_args(data_dir), "--kernel", "18", "--epochs", "1", "--out", str(b)]) == 0
    assert (a / "model.knet").read_bytes() == (b / "model.knet").read_bytes()


def test_missing_labels_file_is_named(data_dir, tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    code = main(["train", "--cycles", str(data_dir / "cycles.csv"), "--labels", str(missing),
                 "--epochs", "1", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "nope.csv" in capsys.readouterr().err


def test_unknown_detector_is_a_usage_error(data_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", *data_args(data_dir), "--detector", "svm", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_reference_train_and_eval(data_dir, tmp_path):
    assert main(["train", *data_args(data_dir), "--detector", "mapo", "--out", str(tmp_path / "m")]) == 0
    assert main(["eval", *data_args(data_dir), "--model", str(tmp_path / "m" / "model.ref"),
                 "--out", str(tmp_path / "e")]) == 0
    assert "accuracy" in (tmp_path / "e" / "eval.txt").read_text().lower()


def test_eval_cnn(data_dir, cnn_model, tmp_path):
    assert main(["eval", *data_args(data_dir), "--model", str(cnn_model / "model.knet"),
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "confusion.csv").read_text().strip().splitlines()
    assert len(rows) == 6


def test_compare_and_crossval(data_dir, tmp_path):
    assert main(["compare", *data_args(data_dir), "--detectors", "cnn,mapo,pca-dd,pca-eigen", "--epochs", "1",
                 "--repeats", "2", "--out", str(tmp_path / "c")]) == 0
    cv = json.loads((tmp_path / "c" / "cv.json").read_text())
    assert set(cv) == {"cnn", "mapo", "pca-dd", "pca-eigen"}
    fps = {tuple(r["split_fingerprints"]) for r in cv.values()}
    assert len(fps) == 1
    for name in ("report.txt", "cv.csv", "confusion.txt", "diagonal.csv"):
        assert (tmp_path / "c" / name).stat().st_size > 0
    assert main(["crossval", *data_args(data_dir), "--detector", "mapo", "--repeats", "2",
                 "--out", str(tmp_path / "x")]) == 0
    single = json.loads((tmp_path / "x" / "cv.json").read_text())["mapo"]
    assert single["test_accuracy"] == cv["mapo"]["test_accuracy"]


def test_spectrum(cnn_model, tmp_path):
    assert main(["spectrum", "--model", str(cnn_model / "model.knet"), "--geometry-bore", "145",
                 "--geometry-bore", "190", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "spectrum.csv").read_text().splitlines()[0]
    assert header.startswith("frequency_hz,channel_0") and header.endswith("channel_mean")
    assert "peak" in (tmp_path / "peaks.txt").read_text().lower()


def test_bench_pass_and_fail(cnn_model, capsys):
    model = str(cnn_model / "model.knet")
    assert main(["bench", "--model", model, "--warmup", "10", "--measured", "100", "--budget-us", "1e6"]) == 0
    assert main(["bench", "--model", model, "--warmup", "10", "--measured", "100", "--budget-us", "0.001"]) == 1
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "knocknet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train", "eval", "crossval", "compare", "spectrum", "bench"):
        assert cmd in res.stdout
