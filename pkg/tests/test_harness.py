import json
from pathlib import Path

import pytest

import harness
from conftest import DEFAULT_CONF
from harness import GRID_SWEEP, CompareCell, run_compare_cell
from objective import ConstraintFamily
from persistence import load_manifest, read_csv, verify_manifest
from ppo_agent import PpoHyperparams
from scenario import RESOURCE_TIERS, ConfigError, ScenarioConfig, draw_radio_units, topology_rng, with_resource_tier

FAMILIES = {family.value for family in ConstraintFamily}

SMALL_RUN = {
    "UAVSIM_NUM_GUS": "2",
    "UAVSIM_NUM_UAVS": "1",
    "UAVSIM_HORIZON": "3",
    "UAVSIM_PPO_HIDDEN_SIZE": "8",
    "UAVSIM_PPO_EPOCHS": "1",
    "UAVSIM_PPO_MINIBATCH": "8",
}


@pytest.fixture
def small_run(monkeypatch):
    for name, value in SMALL_RUN.items():
        monkeypatch.setenv(name, value)


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_default_config_file_loads():
    config, hp = harness.load_config(Path(DEFAULT_CONF), environ={})
    assert config.num_gus == 10
    assert config.num_uavs == 3
    assert hp.episodes == 2000
    assert hp.hidden_size == 64


def test_missing_key_is_named(tmp_path):
    lines = [line for line in Path(DEFAULT_CONF).read_text().splitlines(keepends=True) if not line.startswith("horizon ")]
    path = tmp_path / "partial.conf"
    path.write_text("".join(lines))
    with pytest.raises(ConfigError) as info:
        harness.load_config(path, environ={})
    assert info.value.field == "horizon"


def test_unknown_key_is_named(tmp_path):
    path = tmp_path / "extra.conf"
    path.write_text(Path(DEFAULT_CONF).read_text() + "\nwarp_drive 1\n")
    with pytest.raises(ConfigError) as info:
        harness.load_config(path, environ={})
    assert info.value.field == "warp_drive"


def test_unparseable_value_is_named(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text(Path(DEFAULT_CONF).read_text().replace("\nnum_gus 10\n", "\nnum_gus ten\n"))
    with pytest.raises(ConfigError) as info:
        harness.load_config(path, environ={})
    assert info.value.field == "num_gus"


def test_environment_overrides_the_file():
    config, hp = harness.load_config(
        Path(DEFAULT_CONF), environ={"UAVSIM_NUM_GUS": "12", "UAVSIM_PPO_CLIP": "0.1"}
    )
    assert config.num_gus == 12
    assert hp.clip == 0.1


def test_usage_errors_exit_with_two():
    with pytest.raises(SystemExit) as info:
        harness.main([])
    assert info.value.code == 2


def test_oracle_run_writes_a_manifest(tmp_path, capsys):
    out = tmp_path / "oracle"
    assert harness.main(["oracle", "--seed", "3", "--instances", "4", "--gae-episodes", "5", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] is True
    manifest = load_manifest(out / "manifest.json")
    assert manifest.subcommand == "oracle"
    assert manifest.seed == 3
    assert "metrics/oracle_report.json" in manifest.artifacts
    assert verify_manifest(out) == []


def test_finished_run_is_not_overwritten(tmp_path, capsys):
    out = tmp_path / "oracle"
    argv = ["oracle", "--instances", "2", "--gae-episodes", "2", "--out", str(out)]
    assert harness.main(argv) == 0
    capsys.readouterr()
    assert harness.main(argv) == 1
    assert _error(capsys)["error"] == "FileExistsError"


def test_invalid_config_reports_the_field(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("UAVSIM_W1", "0.5")
    assert harness.main(["baseline", "--out", str(tmp_path / "bad")]) == 1
    error = _error(capsys)
    assert error["error"] == "ConfigError"
    assert error["field"] == "w3"
    assert not (tmp_path / "bad" / "manifest.json").exists()


def test_training_is_reproducible(tmp_path, capsys, small_run):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert harness.main(["train", "--seed", "7", "--episodes", "2", "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["episodes"] == 2
        assert summary["final_checkpoint"] == "checkpoints/ep2.ckpt"
        outputs.append(out)
    first, second = outputs
    assert (first / "metrics" / "training_log.csv").read_bytes() == (
        second / "metrics" / "training_log.csv"
    ).read_bytes()
    assert (first / "checkpoints" / "ep2.ckpt").read_bytes() == (second / "checkpoints" / "ep2.ckpt").read_bytes()
    tags, rows = read_csv(first / "metrics" / "training_log.csv")
    assert tags["seed"] == "7"
    assert [row["episode"] for row in rows] == ["0", "1"]

    evaluation = tmp_path / "eval"
    argv = [
        "evaluate", "--seed", "7", "--episodes", "2", "--traces", "1",
        "--checkpoint", str(first / "checkpoints" / "ep2.ckpt"), "--out", str(evaluation),
    ]
    assert harness.main(argv) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["episodes"] == 2
    assert metrics["checkpoint_episodes"] == 2
    assert (evaluation / "traces" / "rl-0.csv").exists()
    assert not (evaluation / "traces" / "rl-1.csv").exists()


def test_evaluating_with_other_shapes_fails(tmp_path, capsys, small_run, monkeypatch):
    train_out = tmp_path / "train"
    assert harness.main(["train", "--episodes", "1", "--out", str(train_out)]) == 0
    capsys.readouterr()
    monkeypatch.setenv("UAVSIM_NUM_GUS", "3")
    argv = ["evaluate", "--episodes", "1", "--checkpoint", str(train_out / "checkpoints" / "ep1.ckpt"),
            "--out", str(tmp_path / "eval")]
    assert harness.main(argv) == 1
    assert _error(capsys)["error"] == "CheckpointShapeError"


def test_no_uav_baseline(tmp_path, capsys, small_run):
    out = tmp_path / "no-uav"
    assert harness.main(["baseline", "--policy", "no_uav", "--episodes", "3", "--traces", "1", "--out", str(out)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["policy"] == "no_uav"
    assert metrics["episodes"] == 3
    assert metrics["steps"] == 9
    assert {row["constraint"] for row in metrics["satisfaction"]} >= {"security", "ber"}
    tags, rows = read_csv(out / "traces" / "no_uav-0.csv")
    assert tags["policy"] == "no_uav"
    assert rows


def test_compare_runs_a_uav_sweep(tmp_path, capsys, small_run):
    out = tmp_path / "compare"
    argv = ["compare", "--sweeps", "uavs", "--uavs", "1", "--episodes", "1", "--train-episodes", "1", "--out", str(out)]
    assert harness.main(argv) == 0
    summary = json.loads(capsys.readouterr().out)
    policies = [row["policy"] for row in summary["cells"]]
    assert policies == ["nearest", "no_uav", "rl"]
    assert summary["cells"][-1]["rl_source"] == "trained"
    _, rows = read_csv(out / "metrics" / "compare_uavs.csv")
    assert [row["policy"] for row in rows] == policies
    assert verify_manifest(out) == []


def test_traced_episodes_get_a_json_summary(tmp_path, capsys, small_run):
    out = tmp_path / "nearest"
    argv = ["baseline", "--policy", "nearest", "--episodes", "2", "--traces", "1", "--out", str(out)]
    assert harness.main(argv) == 0
    metrics = json.loads(capsys.readouterr().out)
    summary = json.loads((out / "traces" / "nearest-0.json").read_text())
    assert not (out / "traces" / "nearest-1.json").exists()
    assert summary["episode"] == 0
    assert summary["policy"] == "nearest"
    assert summary["steps"] == 3
    assert set(summary["violations"]) == FAMILIES
    assert set(summary["satisfaction"]) == FAMILIES
    for key in ("return", "cumulative_penalty", "mean_latency_norm", "mean_security_norm", "mean_energy_norm"):
        assert key in summary
    _, rows = read_csv(out / "traces" / "nearest-0.csv")
    penalties = [float(row["penalty"]) for row in rows if row["entity"] == "step"]
    assert summary["cumulative_penalty"] == pytest.approx(sum(penalties))
    assert set(metrics["violations"]) == FAMILIES
    assert all(metrics["violations"][family] >= summary["violations"][family] for family in FAMILIES)
    assert "traces/nearest-0.json" in load_manifest(out / "manifest.json").artifacts
    assert verify_manifest(out) == []


@pytest.mark.slow
@pytest.mark.parametrize("tier", list(RESOURCE_TIERS))
def test_trained_policy_is_more_secure_than_nearest(tmp_path, tier):
    config = with_resource_tier(ScenarioConfig(), tier)
    cell = CompareCell("tiers", tier, config, PpoHyperparams(), 0, 200, None, tmp_path / tier)
    rows = {row["policy"]: row for row in run_compare_cell(cell)}
    assert rows["rl"]["mean_security_norm"] > rows["nearest"]["mean_security_norm"]
    if tier != "high":
        assert rows["rl"]["mean_latency_norm"] <= 1.1 * rows["nearest"]["mean_latency_norm"]


@pytest.mark.slow
def test_direct_links_disconnect_on_larger_grids(tmp_path):
    config = ScenarioConfig()
    orus = tuple(draw_radio_units(config, topology_rng(config.rng_seed)))
    disconnected = {}
    for side in GRID_SWEEP:
        cell = CompareCell(
            "grid", str(int(side)), config.replace(grid_width=side, grid_height=side), PpoHyperparams(),
            0, 100, None, tmp_path / f"grid-{int(side)}", orus,
        )
        disconnected[side] = {row["policy"]: row["mean_disconnected"] for row in run_compare_cell(cell)}
    no_uav = [disconnected[side]["no_uav"] for side in GRID_SWEEP]
    assert no_uav == sorted(no_uav)
    assert no_uav[-1] > 0
    assert all(disconnected[side]["rl"] == 0 for side in GRID_SWEEP)
