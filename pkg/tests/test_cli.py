import json
import os
import shutil
import subprocess
import sys

import pytest

from dpsynth.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def write_config(tmp_path, **over):
    d = {
        "method": "dp-merf",
        "seed": 0,
        "data": {"sensitive": "three_gaussians"},
        "privacy": {"epsilon": 1.0},
        "method_config": {"D": 40, "iters": 20},
        "eval": {"n_synthetic": 60, "classifier": {"epochs": 2, "hidden": [8]}},
    }
    d.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return str(p)


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_stage_commands(tmp_path, capsys):
    c, exp = write_config(tmp_path), str(tmp_path / "exp")
    for stage in ("prepare", "pretrain", "train", "synth", "eval"):
        assert main([stage, "--config", c, "--exp-dir", exp]) == 0
    out = last_json(capsys)
    assert out["stage"] == "eval" and os.path.exists(out["metrics"])


def test_seed_override(tmp_path, capsys):
    c, exp = write_config(tmp_path), str(tmp_path / "exp")
    main(["train", "--config", c, "--exp-dir", exp])
    a = last_json(capsys)["run_id"]
    main(["train", "--config", c, "--exp-dir", exp, "--seed", "3"])
    assert last_json(capsys)["run_id"] != a


def test_validation_exit_code(tmp_path):
    assert main(["train", "--config", write_config(tmp_path, method="gan"), "--exp-dir", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_budget_exit_code(tmp_path):
    c = write_config(tmp_path, method_config={"D": 40, "iters": 5, "sigma": 0.5})
    exp = str(tmp_path / "exp")
    assert main(["eval", "--config", c, "--exp-dir", exp]) == 3
    (run_id,) = os.listdir(exp)
    assert os.path.exists(os.path.join(exp, run_id, "ERROR"))
    assert not os.path.exists(os.path.join(exp, run_id, "metrics.json"))


def test_report_and_account(tmp_path, capsys):
    c, exp = write_config(tmp_path), str(tmp_path / "exp")
    assert main(["report", "--exp-dir", exp]) == 2
    assert main(["report", "--config", c, "--exp-dir", exp]) == 0
    out = last_json(capsys)
    assert out["rows"] == 1 and os.path.exists(out["csv"]) and os.path.exists(out["markdown"])
    assert main(["account", "--config", c, "--exp-dir", exp, "--delta", "1e-5", "--delta", "1e-6"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.strip().splitlines()]
    assert [x["delta"] for x in lines] == [1e-5, 1e-6]
    assert lines[0]["epsilon"] < lines[1]["epsilon"]
    assert main(["account", "--ledger", str(tmp_path / "nope.json")]) == 2
    assert main(["account"]) == 2


def test_sweep_command(tmp_path, capsys):
    c = write_config(tmp_path, sweep={"epsilon": [1.0, 10.0], "seeds": [0]})
    exp = str(tmp_path / "exp")
    assert main(["sweep", "--config", c, "--exp-dir", exp]) == 0
    assert len(last_json(capsys)["runs"]) == 2
    assert os.path.exists(os.path.join(exp, "report.csv"))


def test_audit_command(capsys):
    assert main(["audit", "--only", "sensitivity"]) == 0
    reps = json.loads(capsys.readouterr().out)
    assert reps[0]["audit_id"] == "sensitivity" and reps[0]["passed"]
    with pytest.raises(SystemExit) as exc:
        main(["audit", "--only", "nope"])
    assert exc.value.code == 2


def test_bundled_configs_parse():
    from dpsynth.pipeline import ExperimentConfig
    names = sorted(f for f in os.listdir(CONFIGS) if f.endswith(".json"))
    assert len(names) >= 5
    for name in names:
        ExperimentConfig.load(os.path.join(CONFIGS, name))


@pytest.mark.skipif(shutil.which("dpsynth") is None, reason="console script not installed")
def test_console_script(tmp_path):
    c = write_config(tmp_path, method="gan")
    r = subprocess.run(["dpsynth", "prepare", "--config", c, "--exp-dir", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "unknown method" in r.stderr


def test_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "dpsynth.cli", "audit", "--only", "dppromise"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)[0]["passed"]
