import json
import subprocess
import sys

import pytest

from deftensor.cli import main
from deftensor.harness.evaluation import RobustnessTable

CONFIG = """\
# tiny desk run
kernel = tucker
ranks = full
widths = 4,6,6
hidden = 8
n_examples = 120
epochs = 2
pretrain_epochs = 1
batch_size = 16
n_runs = 2
eval_examples = 12
landscape_n = 5
attacks = fgsm
epsilons = 8
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "desk.cfg"
    path.write_text(CONFIG)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_no_arguments_subprocess():
    proc = subprocess.run([sys.executable, "-m", "deftensor"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage:" in proc.stderr


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["train", "--bogus"], ["sweep", "--set", "nokey"], ["train", "--set", "theta=2"]],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_missing_checkpoint(tmp_path, config):
    assert run("sweep", "--config", config, "--out", tmp_path / "none") == 2


def test_missing_report_input(tmp_path):
    assert run("report", "--input", tmp_path / "absent.csv", "--out", tmp_path) == 2


def test_epsilon_list_rows(tmp_path, config):
    out = tmp_path / "run"
    assert run("train", "--config", config, "--out", out) == 0
    assert run("sweep", "--config", config, "--out", out, "--attack", "fgsm,pgd", "--epsilon-list", "2,8,16") == 0
    table = RobustnessTable.from_csv((out / "sweep.csv").read_text())
    keys = [(r.attack, r.epsilon) for r in table.rows]
    assert keys == [("clean", 0.0)] + [(a, e) for a in ("fgsm", "pgd") for e in (2.0, 8.0, 16.0)]
    assert all(len(r.runs) == 2 for r in table.rows)


def test_end_to_end(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert run("train", "--config", config, "--out", out, "--theta", "0.8") == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert 0.0 <= summary["deterministic_test_accuracy"] <= 100.0
    metrics = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert [m["phase"] for m in metrics] == ["pretrain", "train", "train"]

    assert run("sweep", "--config", config, "--out", out) == 0
    csv_text = (out / "sweep.csv").read_text()
    assert RobustnessTable.from_csv(csv_text).to_csv() == csv_text

    assert run("report", "--input", out / "sweep.csv", "--out", out) == 0
    assert capsys.readouterr().out.endswith((out / "report.txt").read_text())

    assert run("attack", "--config", config, "--out", out) == 0
    records = [json.loads(line) for line in (out / "attack.jsonl").read_text().splitlines()]
    assert len(records) == 12 and all(r["linf"] <= 8 / 255 + 1e-12 for r in records)

    assert run("omniscient", "--config", config, "--out", out, "--theta-defense", "0.9") == 0
    assert (out / "omniscient.csv").exists()

    assert run("landscape", "--config", config, "--out", out) == 0
    assert len((out / "landscape.csv").read_text().splitlines()) == 1 + 25


def test_byte_identical_reruns(tmp_path, config):
    # the checkpoint manifest records the output directory, so both runs share it
    out = tmp_path / "run"
    outputs = []
    for _ in range(2):
        assert run("train", "--config", config, "--out", out, "--theta", "0.8", "--seed", "3") == 0
        for cmd in ("sweep", "omniscient", "landscape"):
            assert run(cmd, "--config", config, "--out", out, "--seed", "3") == 0
        assert run("attack", "--config", config, "--out", out, "--seed", "3", "--attack", "pgd") == 0
        names = ("checkpoint.bin", "metrics.jsonl", "sweep.csv", "omniscient.csv", "landscape.csv", "attack.jsonl")
        outputs.append({n: (out / n).read_bytes() for n in names})
    assert outputs[0] == outputs[1]


def test_output_root_env(tmp_path, config, monkeypatch):
    monkeypatch.setenv("DEFTENSOR_OUTPUT_ROOT", str(tmp_path / "root"))
    assert run("train", "--config", config, "--out", "rel", "--set", "epochs=0", "--set", "pretrain_epochs=0") == 0
    assert (tmp_path / "root" / "rel" / "checkpoint.bin").exists()


def test_omniscient_needs_factorized(tmp_path, config):
    out = tmp_path / "plain"
    assert run("train", "--config", config, "--out", out, "--set", "kernel=plain", "--set", "epochs=0") == 0
    assert run("omniscient", "--config", config, "--out", out, "--set", "kernel=plain") == 1
