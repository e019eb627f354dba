import csv
import json

import numpy as np
import pytest

from fairbandit.cli import ConfigError, RunConfig, expand_grid, main
from fairbandit.harness import Script

MINIMAL = """{
  "dims": {"num_groups": 2, "num_contexts": 3, "num_actions": 2, "horizon": 10},
  "algorithm": "few-bandit"
}
"""


def write(path, text):
    path.write_text(text)
    return str(path)


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_json(MINIMAL)
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert RunConfig.from_json(again.to_json()).to_json() == cfg.to_json()


def test_minimal_run_writes_outputs(tmp_path, capsys):
    config = write(tmp_path / "run.json", MINIMAL)
    out = tmp_path / "out"
    assert main(["run", "--config", config, "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"cum_loss", "regret", "bound_value", "parity_max", "parity_mean", "pass"} <= set(summary)
    assert summary["parity_max"] <= 1e-9 and summary["pass"]
    with open(out / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "beta", "parity", "loss", "exp_loss"] and len(rows) == 11
    assert len((out / "trace.jsonl").read_text().splitlines()) == 10


def test_output_schema_stable(tmp_path):
    config = write(tmp_path / "run.json", MINIMAL)
    keys = []
    for seed in (0, 1):
        out = tmp_path / f"o{seed}"
        main(["run", "--config", config, "--seed", str(seed), "--out-dir", str(out)])
        keys.append(sorted(json.loads((out / "summary.json").read_text())))
        first = json.loads((out / "trace.jsonl").read_text().splitlines()[0])
        assert sorted(first) == ["action", "beta", "exp_loss", "loss", "parity", "support_sizes", "t"]
    assert keys[0] == keys[1] == ["bound_value", "checks", "cum_loss", "parity_max", "parity_mean", "pass", "regret"]


def test_invalid_dims_exit_two_with_line(tmp_path, capsys):
    bad = MINIMAL.replace('"num_contexts": 3', '"num_contexts": 0')
    config = write(tmp_path / "bad.json", bad)
    assert main(["run", "--config", config]) == 2
    assert "line 2" in capsys.readouterr().err


def test_malformed_json_exit_two(tmp_path, capsys):
    config = write(tmp_path / "bad.json", '{\n  "dims": {\n  ,\n}')
    assert main(["run", "--config", config]) == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_key_and_missing_script(tmp_path):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_json(MINIMAL.replace('"algorithm"', '"algo"'))
    assert err.value.line == 3
    text = MINIMAL.replace('"algorithm": "few-bandit"', '"environment": {"kind": "scripted", "script": "nope.jsonl"}')
    with pytest.raises(ConfigError):
        RunConfig.from_json(text, tmp_path)


def test_protocol_violation_exit_three(tmp_path):
    script = Script(np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]), [0] * 10, [2] * 10, np.zeros((10, 2)))
    write(tmp_path / "s.jsonl", script.to_jsonl())
    text = MINIMAL.replace('"algorithm": "few-bandit"', '"environment": {"kind": "scripted", "script": "s.jsonl"}')
    config = write(tmp_path / "run.json", text)
    assert main(["run", "--config", config, "--out-dir", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize("algorithm", ["few-full", "few-ensemble", "exp4-baseline", "batch-classifier"])
def test_other_algorithms_run(tmp_path, algorithm):
    config = write(tmp_path / "run.json", MINIMAL.replace("few-bandit", algorithm))
    assert main(["run", "--config", config, "--out-dir", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("extra", [
    '"base": "tree", "height": 3',
    '"base": "tree-iid", "sample_threshold": 5, "height": 3',
    '"base": "fixedshare", "environment": {"kind": "switching"}',
    '"environment": {"kind": "empirical"}',
    '"environment": {"kind": "adversarial-random"}',
])
def test_bases_and_environments(tmp_path, extra):
    text = MINIMAL.replace('"algorithm": "few-bandit"', extra)
    config = write(tmp_path / "run.json", text)
    assert main(["run", "--config", config, "--out-dir", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["pass"]


def test_sweep_reports_slope(tmp_path):
    config = write(tmp_path / "run.json", MINIMAL)
    grid = write(tmp_path / "grid.json", json.dumps({"horizon": [64, 256], "seed": [0, 1]}))
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", config, "--grid", grid, "--out-dir", str(out)]) == 0
    report = json.loads((out / "sweep_report.json").read_text())
    assert len(report["cells"]) == 4 and "loglog_slope" in report
    assert all((out / f"cell_{j:03d}" / "summary.json").exists() for j in range(4))


def test_grid_expansion_dotted_keys():
    cfg = RunConfig.from_json(MINIMAL)
    cells = expand_grid(cfg, {"environment.zero_prob": [0.1, 0.2], "eta": [1.0]})
    assert [c.environment.zero_prob for c in cells] == [0.1, 0.2]


def test_verify_quick(tmp_path, capsys):
    assert main(["verify", "--scale", "quick", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["passed"]
    names = [c["name"] for c in report["checks"]]
    assert "mutation: flipped kappa sign is caught" in names
    assert all(": PASS " in line for line in capsys.readouterr().out.splitlines())
