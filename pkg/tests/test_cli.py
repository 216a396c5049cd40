import json

import pytest

from dpsparse.cli import NON_PRIVATE_BANNER, main


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--n", "300", "--p", "20", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_simulate_writes_data_truth_manifest(dataset):
    assert dataset.read_text().splitlines()[0].endswith(",y")
    assert (dataset.parent / "d.truth.csv").exists()
    m = json.loads((dataset.parent / "d.csv.manifest.json").read_text())
    assert m["seed"] == 4 and m["command"] == "simulate"


def test_estimate_and_replay(dataset, tmp_path, capsys):
    out = tmp_path / "est.csv"
    assert main(["estimate", "--data", str(dataset), "--sigma", "1", "--cx", "6", "--K", "1",
                 "--out", str(out)]) == 0
    assert "eps=0.5" in capsys.readouterr().out
    assert main(["replay", str(tmp_path / "est.csv.manifest.json"), "--into",
                 str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "est.csv").read_bytes() == out.read_bytes()


def test_ci_config_file_with_flag_override(dataset, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(dataset), "sigma": 1.0, "cx": 6.0, "K": 1,
                               "j": [0, 3], "epsilon": 0.25}))
    assert main(["ci", "--config", str(cfg), "--epsilon", "0.5"]) == 0
    out = capsys.readouterr().out
    assert "charged eps=0.5" in out


def test_fdr_runs(dataset, capsys):
    assert main(["fdr", "--data", str(dataset), "--R", "3", "--cx", "6", "--K", "1"]) == 0
    assert "candidates=" in capsys.readouterr().out


def test_disabled_noise_is_flagged(dataset, capsys):
    assert main(["estimate", "--data", str(dataset), "--sigma", "1", "--cx", "6", "--K", "1",
                 "--noise", "disabled"]) == 0
    assert NON_PRIVATE_BANNER in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["estimate", "--bogus"],
    ["estimate", "--sigma", "1"],
    ["bench", "no_such_profile", "--out", "x"],
    ["noise-calc", "--mechanism", "gaussian", "--epsilon", "1"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_missing_clip_level(dataset):
    assert main(["ci", "--data", str(dataset), "--K", "1"]) == 1


def test_bad_csv_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,2\nNaN,3\n")
    assert main(["estimate", "--data", str(bad), "--sigma", "1"]) == 1
    assert ":3:" in capsys.readouterr().err


def test_noise_calc(capsys):
    assert main(["noise-calc", "--mechanism", "gaussian", "--sensitivity", "1", "--epsilon", "1",
                 "--delta", "0.05"]) == 0
    assert capsys.readouterr().out.startswith("gaussian_std=2.537")
    assert main(["noise-calc", "--mechanism", "laplace", "--sensitivity", "2",
                 "--epsilon", "0.5"]) == 0
    assert capsys.readouterr().out.strip() == "laplace_scale=4.0"


def test_bench_degenerate_exit_and_replay(tmp_path):
    out = tmp_path / "b"
    code = main(["bench", "smoke", "--out", str(out), "--reps", "2"])
    assert code in (0, 2)
    metrics = (out / "metrics.csv").read_text()
    assert metrics.startswith("scenario_id,method,")
    assert main(["replay", str(out / "manifest.json"), "--into", str(tmp_path / "again")]) == 0


def test_bench_exit_2_when_degenerate(tmp_path, monkeypatch):
    import dpsparse.bench as bench
    monkeypatch.setattr(bench.ScenarioResult, "degenerate_fraction", property(lambda s: 0.5))
    assert main(["bench", "smoke", "--out", str(tmp_path / "b"), "--reps", "1"]) == 2


def test_bench_exit_0_when_clean(tmp_path, monkeypatch):
    import dpsparse.bench as bench
    monkeypatch.setattr(bench.ScenarioResult, "degenerate_fraction", property(lambda s: 0.0))
    assert main(["bench", "smoke", "--out", str(tmp_path / "b"), "--reps", "1"]) == 0
