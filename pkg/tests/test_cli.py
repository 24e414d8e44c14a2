"""Command-line surface: exit codes, determinism, end-to-end pipeline."""

import json

import pytest

from xmtrack.cli import main
from xmtrack.io import load_trackrun, save_scenario
from xmtrack.metrics import metrics_csv
from xmtrack.sim import Scenario


@pytest.fixture()
def scenario_file(tmp_path):
    sc = Scenario(
        name="cli-demo",
        frames=30,
        initial_box=(100.0, 256.0, 30.0, 30.0),
        velocity=(4.0, 0.0),
        sigma=2.0,
        modality_schedule=[(0, 15, "rgb"), (15, 30, "nir")],
        invalid_windows=[(12, 20)],
        seed=7,
    )
    path = tmp_path / "scenario.json"
    save_scenario(path, sc)
    return path


@pytest.fixture()
def sequence_file(tmp_path, scenario_file):
    out = tmp_path / "seq.jsonl"
    assert main(["simulate", str(scenario_file), "--out", str(out)]) == 0
    return out


def test_simulate_track_eval_pipeline(tmp_path, sequence_file):
    run_path = tmp_path / "run.json"
    rc = main(
        ["track", str(sequence_file), "--out", str(run_path), "--motion", "ctp"]
    )
    assert rc == 0
    assert run_path.exists()

    prefix = tmp_path / "metrics"
    assert main(["eval", str(run_path), "--out", str(prefix)]) == 0
    csv_text = (tmp_path / "metrics.csv").read_text()
    assert csv_text.startswith("sequence,tag,PR,SR,N\n")
    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert payload["sequence"] == "cli-demo"
    assert "all" in payload["tags"]

    # the emitted CSV is exactly the library's rendering of the stored run
    name, run = load_trackrun(run_path)
    assert csv_text == metrics_csv(name, run)


def test_track_rerun_with_same_seed_is_byte_identical(tmp_path, sequence_file):
    out1 = tmp_path / "a.json"
    out2 = tmp_path / "b.json"
    for out in (out1, out2):
        rc = main(
            ["track", str(sequence_file), "--out", str(out), "--motion", "ctp", "--seed", "5"]
        )
        assert rc == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_simulate_rerun_is_byte_identical(tmp_path, scenario_file):
    out1 = tmp_path / "s1.jsonl"
    out2 = tmp_path / "s2.jsonl"
    for out in (out1, out2):
        assert main(["simulate", str(scenario_file), "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_sigma_override_changes_sequence(tmp_path, scenario_file):
    base = tmp_path / "base.jsonl"
    quiet = tmp_path / "quiet.jsonl"
    assert main(["simulate", str(scenario_file), "--out", str(base)]) == 0
    assert main(["simulate", str(scenario_file), "--out", str(quiet), "--sigma", "0"]) == 0
    assert base.read_bytes() != quiet.read_bytes()


def test_motion_presets_produce_different_runs(tmp_path, sequence_file):
    outputs = {}
    for preset in ("off", "kf", "ctp"):
        out = tmp_path / f"{preset}.json"
        assert main(["track", str(sequence_file), "--out", str(out), "--motion", preset]) == 0
        outputs[preset] = out.read_bytes()
    assert outputs["off"] != outputs["kf"]
    assert outputs["kf"] != outputs["ctp"]


def test_track_honors_config_file(tmp_path, sequence_file):
    cfg = tmp_path / "filter.json"
    cfg.write_text('{"motion": "ct", "turn_rate": 0.02, "theta": 1.5}')
    out = tmp_path / "run.json"
    rc = main(
        ["track", str(sequence_file), "--out", str(out), "--config", str(cfg)]
    )
    assert rc == 0


def test_usage_errors_exit_1(capsys):
    assert main(["bogus-subcommand"]) == 1
    assert main([]) == 1
    assert main(["track", "--no-such-flag"]) == 1
    capsys.readouterr()  # swallow argparse noise


def test_missing_input_exits_2(tmp_path):
    assert main(["track", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o.json")]) == 2
    assert main(["simulate", str(tmp_path / "absent.json"), "--out", str(tmp_path / "s.jsonl")]) == 2
    assert main(["eval", str(tmp_path / "absent.json"), "--out", str(tmp_path / "m")]) == 2


def test_corrupt_input_exits_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("this is not a sequence\n")
    assert main(["track", str(bad), "--out", str(tmp_path / "o.json")]) == 2


def test_gradcheck_passes_and_injected_bug_exits_3(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "linear" in out and "siou" in out
    assert main(["gradcheck", "--inject-bug"]) == 3
    capsys.readouterr()


def test_ablate_writes_ordering_report(tmp_path):
    out = tmp_path / "ablation.json"
    rc = main(["ablate", "--suites", "1", "--seed", "0", "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"ordering_fraction", "strict_ctp_over_off_fraction", "suites"}
    assert len(payload["suites"]) == 1
    row = payload["suites"][0]["results"]
    assert set(row) == {"off", "kf", "ekf", "ctp"}
    sr = {k: v["SR"] for k, v in row.items()}
    assert sr["ctp"] >= sr["ekf"] >= sr["kf"] >= sr["off"]


def test_ablate_rejects_empty_suite(tmp_path):
    assert main(["ablate", "--suites", "0", "--out", str(tmp_path / "x.json")]) == 1
