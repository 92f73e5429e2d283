import json

import numpy as np
import pytest
from pydantic import ValidationError

from experiment_harness import (
    ConfigError,
    ExperimentConfig,
    abort_rate,
    get_code,
    get_topology,
    resolved_config_json,
    run_point,
    run_sweep,
    run_trial,
    sweep_points,
)
from nonbinary_ldpc import save_code


@pytest.fixture
def topology_file(tmp_path):
    path = tmp_path / "topology.json"
    path.write_text(json.dumps({"aps": 2, "users": 3, "edges": [[0, 0], [0, 1], [1, 1], [1, 2]]}))
    return str(path)


def test_desk_profile_defaults():
    config = ExperimentConfig()
    assert (config.p, config.code_length, config.checks) == (4, 64, 8)
    assert config.info_bits == 224
    assert config.sum_rates == [0.8]
    assert config.ebn0_db == [2.25]
    assert config.trials == 2000
    assert config.amp_iterations == 25
    assert config.bp_iterations == 1


def test_full_profile_defaults():
    config = ExperimentConfig(profile="full")
    assert (config.p, config.code_length, config.checks) == (8, 766, 30)
    assert config.info_bits == 5888
    assert config.matrix_mode == "streamed"
    assert sweep_points(config)[0].channel_uses == 7360


def test_paper_profile_is_an_alias_of_full():
    config = ExperimentConfig(profile="paper")
    assert config.profile == "full"
    assert config.digest() == ExperimentConfig(profile="full").digest()


def test_config_rejects_inconsistent_values(topology_file):
    with pytest.raises(ValidationError):
        ExperimentConfig(channel_uses=300, sum_rates=[0.8])
    with pytest.raises(ValidationError):
        ExperimentConfig(sum_rates=[0.6, 0.8], ebn0_db=[1.0, 2.0])
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="cell-free")
    with pytest.raises(ValidationError):
        ExperimentConfig(unknown_option=1)
    with pytest.raises(ValidationError):
        ExperimentConfig(checks=64)
    assert ExperimentConfig(mode="cell-free", users=3, topology_path=topology_file).mode == "cell-free"


def test_from_sources_precedence(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"users": 3, "trials": 50, "sum_rates": [0.7]}))

    config = ExperimentConfig.from_sources(str(path), trials=10, users=None)
    assert config.users == 3
    assert config.trials == 10
    assert config.sum_rates == [0.7]

    flagged = ExperimentConfig.from_sources(str(path), channel_uses=900)
    assert flagged.channel_uses == 900
    assert flagged.sum_rates is None

    with pytest.raises(ConfigError):
        ExperimentConfig.from_sources(str(tmp_path / "missing.json"))


def test_resolved_config_round_trips():
    config = ExperimentConfig(users=2, trials=7, ebn0_db=[1.0, 2.0])
    restored = ExperimentConfig(**json.loads(resolved_config_json(config)))
    assert restored == config
    assert restored.digest() == config.digest()


def test_digest_ignores_execution_fields():
    config = ExperimentConfig(trials=5)
    assert config.digest() == ExperimentConfig(trials=5, workers=4, output_path="x.csv").digest()
    assert config.digest() != ExperimentConfig(trials=5, master_seed=1).digest()


def test_sweep_points_over_sum_rate():
    config = ExperimentConfig(users=2, sum_rates=[0.6, 0.8])
    points = sweep_points(config)
    assert [p.sweep_var for p in points] == ["sum_rate", "sum_rate"]
    assert [p.value for p in points] == [0.6, 0.8]
    assert [p.channel_uses for p in points] == [747, 560]
    assert all(p.user_channel_uses == p.channel_uses for p in points)


def test_sweep_points_over_ebn0():
    config = ExperimentConfig(ebn0_db=[1.0, 2.0, 3.0], channel_uses=400)
    points = sweep_points(config)
    assert [p.sweep_var for p in points] == ["ebn0_db"] * 3
    assert points[0].sigma2 > points[1].sigma2 > points[2].sigma2
    assert all(p.channel_uses == 400 for p in points)


def test_oma_points_split_channel_uses():
    config = ExperimentConfig(mode="oma-baseline", users=4, sum_rates=[0.8])
    point = sweep_points(config)[0]
    assert point.channel_uses == 1120
    assert point.user_channel_uses == 280


def test_run_trial_is_deterministic():
    config = ExperimentConfig(users=2, trials=3, ebn0_db=[1.0])
    first = run_trial(config, 5)
    second = run_trial(config, 5)
    other = run_trial(config, 6)
    assert first == second
    assert first.matrix_seeds != other.matrix_seeds
    assert first.user_bits == [224, 224]


def test_run_sweep_accounting():
    config = ExperimentConfig(users=2, trials=6, ebn0_db=[0.5, 4.0], batch_size=4)
    summaries = run_sweep(config)
    assert len(summaries) == 2
    for summary in summaries:
        assert summary.trials == 6
        assert summary.bits_total == 6 * 2 * 224
        assert summary.bit_errors == sum(u['bit_errors'] for u in summary.per_user)
        assert 0 <= summary.ber <= 1
        assert summary.aborted_trials == 0
    assert abort_rate(summaries) == 0.0


def test_oma_with_one_user_matches_single_cell():
    base = {"users": 1, "trials": 8, "ebn0_db": [1.5], "master_seed": 3}
    single = run_sweep(ExperimentConfig(mode="single-cell", **base))[0]
    oma = run_sweep(ExperimentConfig(mode="oma-baseline", **base))[0]
    assert (single.bit_errors, single.frame_errors) == (oma.bit_errors, oma.frame_errors)
    assert single.per_user == oma.per_user


@pytest.mark.parametrize("users", [1, 4])
def test_noiseless_desk_runs_are_error_free(users):
    config = ExperimentConfig(users=users, trials=100, noiseless=True)
    summary = run_sweep(config)[0]
    assert summary.trials == 100
    assert summary.bit_errors == 0
    assert summary.frame_errors == 0


def test_noiseless_cell_free_run(topology_file):
    config = ExperimentConfig(mode="cell-free", users=3, topology_path=topology_file,
                              channel_uses=600, trials=10, noiseless=True)
    summary = run_sweep(config)[0]
    assert summary.bit_errors == 0
    assert len(summary.per_user) == 3


def test_target_frame_errors_stops_between_batches():
    config = ExperimentConfig(trials=12, batch_size=3, target_frame_errors=2, ebn0_db=[-3.0], sum_rates=[1.6])
    point = sweep_points(config)[0]
    records = run_point(config, point)
    assert len(records) in (3, 6, 9, 12)
    assert [r.trial_index for r in records] == list(range(len(records)))
    if len(records) < 12:
        assert sum(r.frame_error for r in records) >= 2


def test_diagnostics_are_written(tmp_path):
    path = tmp_path / "diag.ndjson"
    config = ExperimentConfig(trials=2, ebn0_db=[3.0], amp_iterations=4, diagnostics_path=str(path))
    run_sweep(config)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines
    assert {line["trial"] for line in lines} == {0, 1}
    assert all({"point", "t", "tau2", "residual_norm", "syndrome_ok"} <= set(line) for line in lines)


def test_pinned_code_file(desk_code, tmp_path):
    path = tmp_path / "desk.code"
    save_code(desk_code, path)
    config = ExperimentConfig(trials=1, code_path=str(path), code_seed=99)
    assert np.array_equal(get_code(config).H, desk_code.H)

    wrong = ExperimentConfig(trials=1, code_path=str(path), code_length=32, checks=8)
    with pytest.raises(ConfigError):
        get_code(wrong)


def test_topology_must_match_user_count(topology_file):
    config = ExperimentConfig(mode="cell-free", users=2, topology_path=topology_file)
    with pytest.raises(ConfigError):
        get_topology(config)
    assert get_topology(ExperimentConfig(users=3)).aps == 1
