import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from rssi_gestures import bundle
from rssi_gestures.cli import DEFAULTS, main, resolve_config, train_config
from rssi_gestures.evaluate import EvalReport, accuracy_from_confusion, soak
from rssi_gestures.ingest import read_rssi_log
from rssi_gestures.pipeline import GateConfig, Recognizer, Scaler, recognize_stream

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--set", "hidden=6", "--set", "iterations=15", "--set", "batch_size=10"]


def run(out, *args):
    return main(["--out", str(out), *args])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run(root, "--seed", "3", "--set", "per_class=12", "--set", "per_file_per_class=6",
               "--set", "scenarios=induced,beacon-only", "synth") == 0
    return root


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run(out, "--set", f"data={data / 'induced'}", *SMALL, "train") == 0
    return out / "model.bin"


def test_synth_layout_and_counts(data):
    files = sorted((data / "induced").glob("*.log"))
    assert [f.name for f in files] == ["session_000.log", "session_001.log"]
    labels = sum((read_rssi_log(f).labels for f in files), [])
    assert len(labels) == 36 and {labels.count(g) for g in set(labels)} == {12}


def test_synth_defaults_give_300_per_class(tmp_path):
    cfg = resolve_config(None, [], None)
    assert cfg["per_class"] == 300 and cfg["per_class"] // cfg["per_file_per_class"] == 6


def test_beacon_only_rate(data):
    s = read_rssi_log(data / "beacon-only" / "session_000.log")
    rate = len(s) / ((s.timestamps_ms[-1] - s.timestamps_ms[0]) / 1000.0)
    assert 9.0 <= rate <= 10.5


def _bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("command,extra,primary", [
    ("synth", ["--set", "per_class=4", "--set", "per_file_per_class=2"], None),
    ("train", SMALL, ["model.bin", "loss.csv"]),
    ("eval", SMALL + ["--set", "splits=2", "--set", "knn=true"],
     ["accuracies.csv", "confusion.csv", "confusion_knn.csv", "per_class.csv"]),
    ("gridsearch", SMALL + ["--set", "grid_hidden=3,5", "--set", "folds=2"], ["gridsearch.csv"]),
])
def test_commands_are_deterministic(tmp_path, data, command, extra, primary):
    args = ["--seed", "5", "--set", f"data={data / 'induced'}", *extra, command]
    assert run(tmp_path / "a", *args) == 0
    assert run(tmp_path / "b", *args) == 0
    a, b = _bytes(tmp_path / "a"), _bytes(tmp_path / "b")
    names = a.keys() if primary is None else [Path(p) for p in primary]
    for name in names:
        assert a[name] == b[name], name


def test_fp_soak_deterministic_and_row_count(tmp_path, data, model):
    args = ["--set", f"data={data / 'induced'}", "--set", f"model={model}", "--set", "soak_minutes=2",
            "--set", "calibration_minutes=1", "fp-soak"]
    assert run(tmp_path / "a", *args) == 0 and run(tmp_path / "b", *args) == 0
    for name in ("soak_predictions.csv", "soak_report.csv", "model_calibrated.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = (tmp_path / "a" / "soak_predictions.csv").read_text().splitlines()[1:]
    assert len(rows) == 120 - 4 + 1
    report = (tmp_path / "a" / "soak_report.csv").read_text().splitlines()
    assert report[0] == "label,count,percent" and len(report) == 5
    assert sum(int(r.split(",")[1]) for r in report[1:]) == len(rows)


def test_train_outputs(tmp_path, data, model):
    rows = (model.parent / "loss.csv").read_text().splitlines()
    assert rows[0] == "iteration,loss" and len(rows) == 1 + 15
    rec = bundle.load_recognizer(model)
    assert rec.tau == 50 and rec.gate.variance_threshold > 0
    assert (model.parent / "train.config").read_text().count("\n") == len(DEFAULTS) + 1


def test_combined_mode_uses_1000_iterations():
    cfg = resolve_config(None, ["combined=true"], 0)
    assert train_config(cfg).iterations == 1000
    assert train_config(resolve_config(None, [], 0)).iterations == 600


def test_eval_report_files(tmp_path, data):
    assert run(tmp_path, "--set", f"data={data / 'induced'}", *SMALL, "--set", "splits=2", "eval") == 0
    acc = (tmp_path / "accuracies.csv").read_text().splitlines()
    assert acc[0] == "split,lstm" and len(acc) == 3
    conf = (tmp_path / "confusion.csv").read_text().splitlines()
    assert conf[0] == "true\\pred,Swipe,Push,Pull,Noise"
    counts = np.array([[int(v) for v in row.split(",")[1:]] for row in conf[1:]])
    assert counts.sum(axis=1)[:3].tolist() == [2 * 3, 2 * 3, 2 * 3]
    assert "train time" in (tmp_path / "summary.txt").read_text()


def test_eval_report_stubs():
    y = np.repeat([0, 1, 2], 10)
    r = EvalReport("stub")
    r.add(y, y)
    r.add(y, np.zeros_like(y))
    assert r.split_accuracies[0] == 100.0
    assert r.split_accuracies[1] == pytest.approx(100 / 3)
    for cm, acc in zip(r.confusions, r.split_accuracies):
        assert accuracy_from_confusion(cm) == acc == 100.0 * np.trace(cm) / cm.sum()
        assert cm.sum(axis=1)[:3].tolist() == [10, 10, 10]


def test_run_replay_matches_offline(data, model, capsys):
    log = data / "induced" / "session_000.log"
    assert main(["--set", f"model={model}", "--set", f"source=replay:{log}", "run"]) == 0
    out = capsys.readouterr().out.splitlines()
    rec = bundle.load_recognizer(model)
    s = read_rssi_log(log)
    offline = [f"{t:.3f},{lab}" for t, lab in recognize_stream(zip(s.timestamps_ms.tolist(), s.rssi_dbm.tolist()), rec)]
    assert out[0] == "time_s,label" and out[1:] == offline


def test_constant_stream_soak_all_noise():
    rec = Recognizer(object(), Scaler.identity(50), GateConfig(0.1))
    t = np.arange(0, 60_000, 5, dtype=np.int64)
    decisions = soak(rec, t, np.full(len(t), -40.0))
    assert decisions and all(str(lab) == "Noise" for _, lab in decisions)


def test_exit_codes(tmp_path, data):
    assert run(tmp_path, "--set", "bogus=1", "synth") == 1
    assert run(tmp_path, "--set", "per_class=abc", "synth") == 1
    assert run(tmp_path, "nonsense") == 1
    assert run(tmp_path, "--set", f"data={data / 'induced'}", "gridsearch") == 1
    assert run(tmp_path, "train") == 1
    assert run(tmp_path, "--set", "data=/does/not/exist", "train") == 2
    assert run(tmp_path, "--set", "model=/does/not/exist.bin", "--set", "source=replay:x", "run") == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert run(tmp_path, "--set", f"model={bad}", "--set", "source=replay:x", "run") == 2
    assert run(tmp_path, "--set", "rate_hz=0", "induce") == 1
    assert run(tmp_path, "--set", "sigma=-1", "--set", "per_class=1", "synth") == 1


def test_config_file_and_override_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nhidden = 12\nsigma=2.5\n")
    cfg = resolve_config(str(cfg_file), ["hidden=7"], 9)
    assert cfg["hidden"] == 7 and cfg["sigma"] == 2.5 and cfg["seed"] == 9
    cfg_file.write_text("unknown_key=1\n")
    assert main(["--config", str(cfg_file), "--out", str(tmp_path), "synth"]) == 1


def test_induce_prints_key_values(capsys):
    assert main(["--set", "target=127.0.0.1", "--set", "rate_hz=50", "--set", "duration_s=0.2", "induce"]) == 0
    keys = [line.split("=")[0] for line in capsys.readouterr().out.splitlines()]
    assert keys == ["mode", "sent", "errors", "elapsed_s", "achieved_rate_hz"]


def test_run_sigint_flushes_and_exits_zero(tmp_path, model):
    wireless = tmp_path / "wireless"
    wireless.write_text((FIXTURES / "proc_net_wireless.txt").read_text())
    proc = subprocess.Popen([sys.executable, "-m", "rssi_gestures.cli", "--set", f"model={model}",
                             "--set", f"source=proc:{wireless}", "run"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    time.sleep(6.5)
    proc.send_signal(signal.SIGINT)
    out, err = proc.communicate(timeout=20)
    assert proc.returncode == 0, err
    lines = out.splitlines()
    assert lines[0] == "time_s,label" and len(lines) >= 2
    assert all(line.endswith(",Noise") for line in lines[1:])
