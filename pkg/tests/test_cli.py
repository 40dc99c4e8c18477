import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from unismooth import harness as hz
from unismooth.cli import build_from_config, main
from unismooth.config import ConfigError, load_config, parse_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "name": "small",
    "model": {"input_floors": [2]},
    "excitation": {"kind": "sinusoid", "amplitude": 5.0e3, "frequency": 8.0, "duration": 3.0},
    "sensors": "1.2",
    "noise": {"level": 0.01, "seed": 2},
    "estimators": [{"method": "us", "label": "us_N5", "window": 5},
                   {"method": "akf", "qx": 1e-10, "qp": 1e6}],
}


def write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def with_changes(**blocks):
    data = json.loads(json.dumps(BASE))
    data.update(blocks)
    return data


# ------------------------------------------------------------------- schema

def test_string_where_number_expected(tmp_path, capsys):
    data = with_changes(noise={"level": "high"})
    out = tmp_path / "out"
    code = main(["run-experiment", str(write_config(tmp_path, data)), "--out-dir", str(out)])
    assert code == 2
    assert "noise.level" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_rejected(tmp_path, capsys):
    data = with_changes(model={"input_floors": [2], "colour": "red"})
    out = tmp_path / "out"
    assert main(["simulate", str(write_config(tmp_path, data)), "--out-dir", str(out)]) == 2
    assert "model.colour" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("bad", [
    {"model": {"input_floors": [9]}},
    {"sensors": "7.7"},
    {"sensors": [{"quantity": "strain", "floor": 1}]},
    {"reduction": {"estimator_modes": 12}},
    {"excitation": {"kind": "sinusoid"}},
    {"estimators": []},
    {"estimators": [{"method": "us"}, {"method": "us"}]},
])
def test_invalid_configs_write_nothing(tmp_path, bad):
    out = tmp_path / "out"
    code = main(["run-experiment", str(write_config(tmp_path, with_changes(**bad))),
                 "--out-dir", str(out)])
    assert code == 2 and not out.exists()


def test_parse_config_errors():
    with pytest.raises(ConfigError):
        parse_config(["not", "a", "mapping"])
    with pytest.raises(ConfigError, match="tuning"):
        parse_config(with_changes(tuning={"method": "akf", "params": [
            {"name": "pinv_tolerance", "lo": -3, "hi": -1}]}))


def test_yaml_exponent_floats(tmp_path):
    path = tmp_path / "c.yaml"
    text = yaml.safe_dump(BASE).replace("5000.0", "5e3")
    path.write_text(text)
    assert load_config(path).excitation.amplitude == 5e3


def test_missing_config_file(tmp_path):
    assert main(["simulate", str(tmp_path / "none.yaml")]) == 2


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_bundled_configs_parse(path):
    cfg = load_config(path)
    assert cfg.estimators


# -------------------------------------------------------------- end to end

def test_run_experiment_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run-experiment", str(write_config(tmp_path, BASE)), "--out-dir", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert names == {"truth.csv", "observations.csv", "simulation.json", "metrics.json",
                     "estimate_us_N5.csv", "estimate_akf.csv"}
    lines = [ln for ln in capsys.readouterr().out.splitlines() if "overall=" in ln]
    assert len(lines) == 2
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["steps"] == [1, 295]
    for m in metrics["methods"].values():
        assert m["overall"] == pytest.approx(m["displacement"] + m["velocity"] + m["input"])


def test_csv_parses_back_losslessly(tmp_path):
    cfg_path = write_config(tmp_path, BASE)
    out = tmp_path / "sim"
    assert main(["simulate", str(cfg_path), "--out-dir", str(out)]) == 0
    sc = build_from_config(load_config(cfg_path))
    truth = hz.history_from_columns(hz.read_table_csv(out / "truth.csv"))
    np.testing.assert_array_equal(truth.displacement, sc.truth_history.displacement)
    np.testing.assert_array_equal(truth.inputs, sc.truth_history.inputs)
    obs = hz.read_table_csv(out / "observations.csv")
    np.testing.assert_array_equal(np.column_stack([obs[k] for k in sc.sensors.labels()]),
                                  sc.observations)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_simulate_then_estimate_matches_single_shot(tmp_path, fmt):
    cfg_path = write_config(tmp_path, BASE)
    one, sim, est = tmp_path / "one", tmp_path / "sim", tmp_path / "est"
    assert main(["run-experiment", str(cfg_path), "--out-dir", str(one), "--format", fmt]) == 0
    assert main(["simulate", str(cfg_path), "--out-dir", str(sim), "--format", fmt]) == 0
    assert main(["estimate", str(cfg_path), "--from", str(sim), "--out-dir", str(est),
                 "--format", fmt]) == 0
    a = json.loads((one / "metrics.json").read_text())
    b = json.loads((est / "metrics.json").read_text())
    assert a == b


def test_seed_override_changes_observations(tmp_path):
    cfg_path = write_config(tmp_path, BASE)
    for seed in ("5", "6"):
        assert main(["simulate", str(cfg_path), "--out-dir", str(tmp_path / seed),
                     "--seed", seed]) == 0
    a = hz.read_table_csv(tmp_path / "5" / "observations.csv")
    b = hz.read_table_csv(tmp_path / "6" / "observations.csv")
    assert not np.array_equal(a["acc_F1"], b["acc_F1"])
    assert json.loads((tmp_path / "6" / "simulation.json").read_text())["seed"] == 6


def test_window_zero_filtering_limit(tmp_path):
    data = with_changes(estimators=[{"method": "us", "window": 0}])
    out = tmp_path / "n0"
    assert main(["run-experiment", str(write_config(tmp_path, data)), "--out-dir", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["steps"] == [1, 300] and "us_N0" in m["methods"]


def test_estimator_failure_exit_code(tmp_path, capsys):
    # two loads and one sensor: the N = 0 input normal matrix is singular at
    # the first step
    data = with_changes(model={"input_floors": [2, 5]},
                        sensors=[{"quantity": "disp", "floor": 1}],
                        estimators=[{"method": "us", "window": 0}])
    code = main(["run-experiment", str(write_config(tmp_path, data)),
                 "--out-dir", str(tmp_path / "f")])
    assert code == 3
    assert "step k=1" in capsys.readouterr().err


def test_estimate_requires_data_dir(tmp_path):
    assert main(["estimate", str(write_config(tmp_path, BASE)),
                 "--out-dir", str(tmp_path / "e")]) == 2


def test_compare(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", str(write_config(tmp_path, BASE)), "--out-dir", str(out)]) == 0
    cmp = json.loads((out / "comparison.json").read_text())
    m = json.loads((out / "metrics.json").read_text())["methods"]
    assert cmp["akf_over_us"] == pytest.approx(m["akf"]["overall"] / m["us_N5"]["overall"])


def test_tune_and_sweep(tmp_path):
    data = with_changes(
        tuning={"method": "akf", "params": [{"name": "qp", "lo": 4.0, "hi": 6.0, "step": 1.0}],
                "fixed": {"qx": 1e-10}},
        sweep={"windows": [0, 2, 4]})
    cfg_path = write_config(tmp_path, data)
    out = tmp_path / "t"
    assert main(["tune", str(cfg_path), "--out-dir", str(out)]) == 0
    surface = hz.read_table_csv(out / "tuning_surface.csv")
    np.testing.assert_array_equal(surface["log10_qp"], [4.0, 5.0, 6.0])
    best = json.loads((out / "tuning.json").read_text())
    assert best["best_value"] == pytest.approx(np.nanmin(surface["overall"]), rel=1e-11)
    assert main(["sweep", str(cfg_path), "--out-dir", str(out), "--workers", "2"]) == 0
    sweep = hz.read_table_csv(out / "window_sweep.csv")
    np.testing.assert_array_equal(sweep["window"], [0, 2, 4])
    assert main(["sweep", str(cfg_path), "--out-dir", str(tmp_path / "s1")]) == 0
    serial = hz.read_table_csv(tmp_path / "s1" / "window_sweep.csv")
    np.testing.assert_array_equal(serial["overall"], sweep["overall"])


def test_tune_without_block(tmp_path):
    assert main(["tune", str(write_config(tmp_path, BASE)), "--out-dir", str(tmp_path / "x")]) == 2


def test_sampled_series_excitation(tmp_path):
    hz.write_excitation(tmp_path / "rec.txt", hz.sinusoid(5e3, 8.0, 2.0))
    data = with_changes(excitation={"kind": "sampled-series", "path": "rec.txt"})
    out = tmp_path / "ss"
    assert main(["run-experiment", str(write_config(tmp_path, data)), "--out-dir", str(out)]) == 0
    assert json.loads((out / "simulation.json").read_text())["steps"] == 200
