import json
import subprocess
import sys

import pytest

from onepass_ntk.cli import run_command
from onepass_ntk.config import dump_config, load_config, parse_config
from onepass_ntk.errors import ConfigError
from onepass_ntk.experiment import ExperimentConfig
from onepass_ntk.network import InverseTime

TINY = """\
version: 1
d: 5
m: 16
target: teacher
tau: 0.1
schedule: constant
eta: 0.2
T: 40
eval_every: 10
n_eval: 50
n_runs: 2
seed: 3
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def test_spectrum_json(tmp_path):
    out = tmp_path / "spectrum.json"
    assert run_command(["spectrum", "--d", "5", "--blocks", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["blocks"][0]["beta"] == 0.05
    assert [b["ell"] for b in doc["blocks"]] == [1, 0, 2]


def test_bound_csv(tmp_path):
    out = tmp_path / "bound.csv"
    assert run_command(["bound", "--d", "5", "--theta", "0.1", "--T", "100", "--points", "11",
                        "--width-c", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# c1=0.19945423")
    assert lines[2] == "t,bound,argmin_block"
    values = [float(r.split(",")[1]) for r in lines[3:]]
    assert len(values) == 11 and all(a >= b for a, b in zip(values, values[1:]))


def test_check_passes(capsys):
    assert run_command(["check"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and out.count("[PASS]") == 9


def test_train_is_byte_identical(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_command(["train", "--config", str(tiny), "--output-dir", str(out)]) == 0
    assert (a / "trace_run000.csv").read_bytes() == (b / "trace_run000.csv").read_bytes()
    assert (a / "trace_run000.json").read_bytes() == (b / "trace_run000.json").read_bytes()


def test_experiment_outputs(tiny, tmp_path):
    text = TINY.replace("schedule: constant\neta: 0.2", "schedule: inverse_time\ntheta: 0.1")
    cfg = tmp_path / "inv.yaml"
    cfg.write_text(text + "bound_blocks: 3\n")
    out = tmp_path / "exp"
    assert run_command(["experiment", "--config", str(cfg), "--output-dir", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"trace_run000.csv", "trace_run001.csv", "aggregate.csv", "bound_comparison.csv"} <= names
    header = (out / "bound_comparison.csv").read_text().splitlines()[0]
    assert header == "t,empirical_mean,bound,argmin_block,below_empirical,exact_remainder"


def test_seed_override_changes_output(tiny, tmp_path):
    run_command(["train", "--config", str(tiny), "--output-dir", str(tmp_path / "a")])
    run_command(["train", "--config", str(tiny), "--output-dir", str(tmp_path / "b"), "--seed", "99"])
    assert (tmp_path / "a/trace_run000.csv").read_bytes() != (tmp_path / "b/trace_run000.csv").read_bytes()


@pytest.mark.parametrize("text", [TINY + "colour: red\n", TINY.replace("version: 1", "version: 2"),
                                  TINY.replace("m: 16", "m: sixteen"), TINY.replace("m: 16", "m: 15"),
                                  "version: 1\nd: [oops\n"])
def test_bad_config_exits_2(tmp_path, text, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    assert run_command(["train", "--config", str(p), "--output-dir", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("config error")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"cfg:13: unknown key 'colour'"):
        parse_config(TINY + "colour: red\n", "cfg")


def test_missing_file_exits_3(tmp_path):
    assert run_command(["train", "--config", str(tmp_path / "nope.yaml")]) == 3


def test_bad_mnist_file_exits_3(tmp_path):
    junk = tmp_path / "junk.idx"
    junk.write_bytes(b"\x00\x00\x08\x01" + b"\x00" * 3)
    code = run_command(["mnist-prep", "--images", str(junk), "--labels", str(junk), "--out", str(tmp_path / "c")])
    assert code == 3


def test_usage_error_exits_2():
    assert run_command(["spectrum"]) == 2
    assert run_command(["frobnicate"]) == 2


def test_mnist_prep(mnist_paths, tmp_path, capsys):
    out = tmp_path / "cache.npz"
    assert run_command(["mnist-prep", "--images", str(mnist_paths[0]), "--labels", str(mnist_paths[1]),
                        "--out", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 1000 and info["d"] == 784


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(d=7, m=40, target="quadratic", tau=0.3, schedule=InverseTime(0.15), T=300, seed=8)
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    back, _ = load_config(p)
    # eval_every comes back resolved (T / 100) but describes the same experiment
    assert back.to_dict() == cfg.to_dict() and back.config_hash() == cfg.config_hash()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "onepass_ntk", "spectrum", "--d", "3", "--blocks", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["blocks"][0]["beta"] == pytest.approx(1 / 12)
