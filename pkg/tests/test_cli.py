import json

import pytest

from cachesched.cli import main


@pytest.fixture
def config_file(tmp_path):
    cfg = {
        "scenario": "helper",
        "scheduler": "bp-matching",
        "seed": 3,
        "slots": 8,
        "power_levels": 2,
        "bp_iterations": 2,
        "delay_thresholds": [5],
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_writes_outputs(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_file), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheduler"] == "bp-matching"
    assert summary["slots"] == 8
    assert "wrote" in capsys.readouterr().out


def test_run_replay_byte_identical(tmp_path, config_file):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    main(["run", "--config", str(config_file), "--out", str(out1)])
    main(["run", "--config", str(config_file), "--out", str(out2)])
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


def test_set_overrides(tmp_path, config_file):
    out = tmp_path / "out"
    assert (
        main(
            [
                "run", "--config", str(config_file), "--out", str(out),
                "--slots", "4", "--scheduler", "exhaustive",
                "--set", "power_weight=0.5", "--set", "delay_thresholds=[2,4]",
            ]
        )
        == 0
    )
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheduler"] == "exhaustive"
    assert summary["slots"] == 4
    assert summary["config"]["power_weight"] == 0.5
    assert set(summary["failure_rates"]) == {"2", "4"}


def test_unknown_key_fails(tmp_path, config_file, capsys):
    assert main(["run", "--config", str(config_file), "--set", "nope=1"]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_gen_topology_then_run(tmp_path, config_file):
    scenario = tmp_path / "scenario.json"
    assert main(["gen-topology", "--config", str(config_file), "--out-file", str(scenario)]) == 0
    data = json.loads(scenario.read_text())
    assert data["format"] == "cachesched-topology-v1"
    out = tmp_path / "out"
    assert (
        main(
            [
                "run", "--config", str(config_file), "--out", str(out),
                "--set", f'topology_path="{scenario}"',
            ]
        )
        == 0
    )
    assert (out / "summary.json").exists()


def test_sweep_command(tmp_path, config_file):
    out = tmp_path / "sweep"
    assert (
        main(
            [
                "sweep", "--config", str(config_file), "--out", str(out),
                "--param", "power_weight", "--values", "0.5,2.0",
            ]
        )
        == 0
    )
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["value"] for r in rows] == [0.5, 2.0]
    csv_lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 3


def test_compare_command(tmp_path, config_file):
    out = tmp_path / "cmp"
    assert (
        main(
            [
                "compare", "--config", str(config_file), "--out", str(out),
                "--schedulers", "bp-matching,exhaustive",
            ]
        )
        == 0
    )
    report = json.loads((out / "compare.json").read_text())
    assert report["scheduler_a"] == "bp-matching"
    assert report["a_exceeds_reference_slots"] == 0
    assert (out / "a" / "metrics.csv").exists()
    assert (out / "b" / "metrics.csv").exists()


def test_defaults_without_config(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--out", str(out), "--slots", "3",
                 "--set", "power_levels=2", "--set", "bp_iterations=2", "--seed", "3"]) == 0
