import json
import subprocess
import sys

import pytest

from shuffle_fl import cli
from shuffle_fl.cli import PROBLEM_KEYS, RUN_KEYS, SWEEP_KEYS, load_config, main
from shuffle_fl.errors import ConfigError

FLAG = {"kind": "--problem"}


def flag(key):
    return FLAG.get(key, "--" + key.replace("_", "-"))


def help_text(sub, capsys):
    assert main([sub, "--help"]) == 0
    return capsys.readouterr().out


@pytest.mark.parametrize("sub, keys", [("run", RUN_KEYS + PROBLEM_KEYS),
                                       ("sweep", RUN_KEYS + PROBLEM_KEYS + SWEEP_KEYS)])
def test_every_schema_key_has_a_flag(sub, keys, capsys):
    text = help_text(sub, capsys)
    for key in keys:
        assert flag(key) in text, key


def test_other_subcommands_have_help(capsys):
    for sub in ("bounds", "verify-concentration", "oracle"):
        assert "--" in help_text(sub, capsys)


def test_minimal_local_config_defaults():
    cfg = load_config({"algorithm": "local-rr", "M": 2, "N": 8, "K": 16, "B": 2, "seed": 0,
                       "problem": {"kind": "f2", "L": 10, "mu": 1, "nu": 1}})
    assert cfg.run.step_size == "ThmLocalRR"
    assert cfg.run.sync_shuf is False and cfg.run.record == "per_epoch"
    assert cfg.problem.kind == "f2" and cfg.problem.L == 10
    sync = load_config({"algorithm": "minibatch-rr", "M": 2, "N": 8, "K": 16, "B": 2, "sync_shuf": True})
    assert sync.run.step_size == "ThmMinibatchRRSync"
    assert load_config({"algorithm": "gd", "M": 1, "N": 4, "K": 1}).run.step_size is None


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError) as exc:
        load_config({"algorithm": "local-rr", "M": 2, "N": 4, "K": 3, "B": 3})
    assert "B must divide N" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        load_config({"algorithm": "minibatch-rr", "M": 3, "N": 4, "K": 3, "B": 2, "sync_shuf": True})
    assert "M must divide N under SyncShuf" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        load_config({"algorithm": "gd", "M": 1, "N": 4, "K": 1, "bogus": 1})
    assert "bogus" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        load_config({"algorithm": "gd", "M": "two", "N": 4, "K": 1})
    assert "M" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        load_config({"algorithm": "gd", "M": 1, "N": 4, "K": 1, "problem": {"kind": "f9"}})
    assert "problem.kind" in str(exc.value)


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"algorithm": "minibatch-rr", "M": 1, "N": 4, "K": 2, "B": 2,
                             "step_size": 0.1, "problem": {"kind": "f3"}}))
    cfg = load_config(str(p), {"K": 5})
    assert cfg.run.K == 5 and cfg.run.step_size == 0.1


def test_sweep_values_string():
    cfg = load_config({"algorithm": "minibatch-rr", "M": 1, "N": 8, "K": 2, "B": 2, "axis": "M",
                       "values": "1,2,4", "trials": 3}, sweep=True)
    assert cfg.values == (1, 2, 4)


def test_run_exit_zero_and_embeds_config(capsys):
    rc = main(["run", "--algorithm", "minibatch-rr", "--M", "2", "--N", "8", "--K", "3", "--B", "2",
               "--eta", "0.05", "--problem", "f3"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["M"] == 2 and doc["config"]["problem"]["kind"] == "f3"
    assert len(doc["suboptimality"]) == 4


def test_run_bad_config_exits_two(capsys):
    rc = main(["run", "--algorithm", "local-rr", "--M", "2", "--N", "4", "--K", "1", "--B", "3"])
    assert rc == 2
    assert "B must divide N" in capsys.readouterr().err
    assert main(["run", "--M", "notanint"]) == 2


def test_strict_divergence_exits_three(capsys):
    argv = ["run", "--algorithm", "minibatch-rr", "--M", "1", "--N", "4", "--K", "200", "--B", "2",
            "--eta", "3", "--problem", "f3", "--x0", "1", "--relax-batch-limits"]
    assert main(argv) == 0
    assert "diverged" in capsys.readouterr().err
    assert main(argv + ["--strict"]) == 3


def test_run_csv_with_sidecar(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--algorithm", "gd", "--M", "1", "--N", "4", "--K", "2", "--problem", "f1",
                 "--x0", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("record,suboptimality\n")
    meta = json.loads((tmp_path / "r.csv.meta.json").read_text())
    assert meta["config"]["algorithm"] == "gd"


def test_sweep_outputs_and_thread_env(tmp_path, monkeypatch):
    argv = ["sweep", "--algorithm", "minibatch-rr", "--N", "8", "--K", "4", "--B", "2", "--eta", "0.05",
            "--problem", "f3", "--axis", "M", "--values", "1,2,4", "--trials", "50"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(argv + ["--out", str(a)]) == 0
    monkeypatch.setenv("SHUFFLE_FL_THREADS", "3")
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["spec"]["trials"] == 50 and len(doc["points"]) == 3


def test_default_threads(monkeypatch):
    from shuffle_fl.harness import default_threads
    monkeypatch.delenv("SHUFFLE_FL_THREADS", raising=False)
    assert default_threads() == 1
    monkeypatch.setenv("SHUFFLE_FL_THREADS", "4")
    assert default_threads() == 4


def test_sweep_unwritable_path_exits_one(tmp_path):
    assert main(["sweep", "--algorithm", "minibatch-rr", "--N", "8", "--K", "2", "--B", "2", "--eta", "0.05",
                 "--problem", "f3", "--axis", "M", "--values", "1,2,4", "--trials", "5",
                 "--out", str(tmp_path / "nope" / "x.csv")]) == 1


def test_bounds(capsys):
    assert main(["bounds", "--theorem", "T1", "--L", "1", "--mu", "1", "--nu", "1",
                 "--M", "1", "--N", "10", "--K", "100", "--B", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["N"] == 10 and doc["step_size"] > 0 and "explicit_bound" in doc


def test_verify_concentration(capsys):
    assert main(["verify-concentration", "--M", "2", "--N", "10", "--n", "5", "--trials", "20000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["result"] == "PASS" and doc["config"]["N"] == 10


def test_oracle(capsys):
    assert main(["oracle", "--check", "brute_force_epoch", "--N", "4", "--B", "2", "--M", "2",
                 "--eta", "0.1", "--trials", "1000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["exact"] - doc["closed_form"]) < 1e-12


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "shuffle_fl.cli", "bounds", "--theorem", "T1", "--L", "1",
                        "--mu", "1", "--nu", "1", "--N", "10", "--K", "100", "--B", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "step_size" in r.stdout
