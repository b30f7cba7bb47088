import csv
import json
from pathlib import Path

import pytest

from main import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from src.scenario import validate_scenario

FIVE_NODE = str(Path(__file__).parent / "scenarios" / "five_node.json")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("MESHLOC_LOG", "MESHLOC_OUT", "MESHLOC_FORMAT"):
        monkeypatch.delenv(name, raising=False)


def test_run_writes_metrics_and_summary(tmp_path):
    code = main(["run", "--scenario", FIVE_NODE, "--seed", "7", "--duration", "5", "--out", str(tmp_path)])
    assert code == EXIT_OK
    with open(tmp_path / "metrics.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["time_s", "node_id", "metric", "value"]
    assert len(rows) > 1
    assert rows[1][0] == "0.000000"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seed"] == 7
    assert summary["duration_s"] == 5.0
    assert summary["schema_version"] == 1
    assert summary["conservation_ok"] is True


def test_same_seed_gives_identical_files(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        args = ["run", "--scenario", FIVE_NODE, "--seed", "3", "--duration", "4", "--out", str(out)]
        assert main(args) == EXIT_OK
    for name in ("metrics.csv", "summary.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_json_format(tmp_path):
    args = ["run", "--scenario", FIVE_NODE, "--duration", "1", "--format", "json", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    records = json.loads((tmp_path / "metrics.json").read_text())
    assert set(records[0]) == {"time_s", "node_id", "metric", "value"}


def test_multiple_runs_get_seed_suffixes(tmp_path):
    args = ["run", "--scenario", FIVE_NODE, "--seed", "10", "--runs", "2", "--duration", "1",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["metrics_seed10.csv", "metrics_seed11.csv", "summary_seed10.json", "summary_seed11.json"]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MESHLOC_OUT", str(tmp_path / "env_out"))
    assert main(["run", "--scenario", FIVE_NODE, "--duration", "1"]) == EXIT_OK
    assert (tmp_path / "env_out" / "summary.json").exists()


def test_validate_accepts_good_file(capsys):
    assert main(["validate", "--scenario", FIVE_NODE]) == EXIT_OK
    assert "is valid" in capsys.readouterr().err


def test_validate_reports_every_issue(tmp_path, capsys):
    bad = json.loads(Path(FIVE_NODE).read_text())
    bad["nodes"][1]["id"] = bad["nodes"][0]["id"]
    bad["topics"][0]["subscribers"].append(99)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["validate", "--scenario", str(path)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "duplicate node id" in err
    assert "unknown node 99" in err


def test_run_refuses_invalid_scenario(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == EXIT_INVALID
    assert not (tmp_path / "summary.json").exists()


def test_missing_scenario_is_a_runtime_error(tmp_path):
    assert main(["validate", "--scenario", str(tmp_path / "nope.json")]) == EXIT_RUNTIME


def test_bad_format_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MESHLOC_FORMAT", "xml")
    assert main(["run", "--scenario", FIVE_NODE, "--duration", "1", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_example_prints_a_valid_scenario(capsys):
    assert main(["example"]) == EXIT_OK
    scenario = validate_scenario(capsys.readouterr().out.encode("utf-8"))
    assert len(scenario.nodes) == 5
