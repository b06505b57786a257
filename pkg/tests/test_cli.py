import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dyingrelu import cli
from dyingrelu.theory import NumericalError

QUICK = ["--iters", "200", "--runs", "3"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_theory_sweep(tmp_path):
    assert cli.main(["theory", "--out-dir", str(tmp_path), *QUICK]) == 0
    reports = sorted(tmp_path.glob("theory_p*.json"))
    assert len(reports) == 7
    for path in reports:
        doc = json.loads(path.read_text())
        assert doc["spectrum"]["multiplicity_u0"] == 9
        assert doc["stable"] and not doc["warnings"]
        assert doc["spec"]["eta_source"].startswith("default")
    doc = json.loads((tmp_path / "theory_p0.5.json").read_text())
    assert doc["spectrum"]["u0"] == pytest.approx(0.5, abs=1e-12)
    rows = read_csv(tmp_path / "theory_p0.5.csv")
    assert rows[0] == ["iteration", "error_norm_sq"] and len(rows) == 201


def test_theory_unstable_step_is_recorded(tmp_path):
    assert cli.main(["theory", "--out-dir", str(tmp_path), "--activation-probs", "0.5", "--eta", "1.0",
                     "--iters", "30", "--runs", "2"]) == 0
    doc = json.loads((tmp_path / "theory_p0.5.json").read_text())
    assert not doc["stable"] and doc["warnings"]
    err = [float(r[1]) for r in read_csv(tmp_path / "theory_p0.5.csv")[1:]]
    assert len(err) == 30 and err[-1] > 1e6 * err[0]


def test_simulate_smoke(tmp_path):
    assert cli.main(["simulate", "--out-dir", str(tmp_path), "--runs", "1", "--iters", "10",
                     "--variant", "analysis", "--activation-probs", "0.3"]) == 0
    rows = read_csv(tmp_path / "sim_analysis_p0.3.csv")
    assert rows[0] == ["iteration", "avg_sq_error_norm"] and len(rows) == 11
    meta = json.loads((tmp_path / "sim_analysis_p0.3.json").read_text())
    assert meta["runs"] == 1 and meta["spec"]["variant"] == "analysis"
    assert not (tmp_path / "sim_original_p0.3.csv").exists()


def test_simulate_is_reproducible_from_its_own_json(tmp_path):
    args = ["simulate", "--activation-probs", "0.8,0.2", "--iters", "300", "--runs", "4", "--seed", "9"]
    assert cli.main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("sim_original_p0.8.csv", "sim_analysis_p0.2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    spec = json.loads((tmp_path / "a" / "sim_original_p0.8.json").read_text())["spec"]
    spec["out_dir"] = str(tmp_path / "c")
    cli.cmd_simulate(spec)
    assert (tmp_path / "a" / "sim_original_p0.8.csv").read_bytes() == (tmp_path / "c" / "sim_original_p0.8.csv").read_bytes()


def test_simulate_workers(tmp_path):
    base = ["simulate", "--activation-probs", "0.4", "--iters", "200", "--runs", "6"]
    assert cli.main([*base, "--out-dir", str(tmp_path / "s")]) == 0
    assert cli.main([*base, "--workers", "2", "--out-dir", str(tmp_path / "p")]) == 0
    name = "sim_analysis_p0.4.csv"
    assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


@pytest.mark.parametrize("bad", [["--runs", "0"], ["--iters", "-5"], ["--activation-probs", "0.5,1.2"],
                                 ["--eta", "-0.1"], ["--L", "2"], ["--a", "0"]])
def test_compare_usage_errors(tmp_path, bad, capsys):
    with pytest.raises(SystemExit) as info:
        code = cli.main(["compare", "--out-dir", str(tmp_path), *bad])
        raise SystemExit(code)
    assert info.value.code == cli.EXIT_USAGE


def test_compare_small(tmp_path):
    assert cli.main(["compare", "--out-dir", str(tmp_path), "--activation-probs", "0.8,0.3",
                     "--iters", "3000", "--runs", "20", "--stride", "10"]) == 0
    summary = json.loads((tmp_path / "compare_summary.json").read_text())
    assert summary["probs_descending"] == [0.8, 0.3]
    point = summary["points"]["p0.3"]
    assert set(point["time_to_threshold"]) == {"theory", "analysis", "original"}
    assert summary["monotone_time_to_threshold"]["theory"] is True
    rows = read_csv(tmp_path / "compare_p0.8.csv")
    assert rows[0] == ["iteration", "theory", "analysis", "original"] and len(rows) == 301


@pytest.mark.slow
def test_compare_desk_scale_p03(tmp_path):
    assert cli.main(["compare", "--out-dir", str(tmp_path), "--activation-probs", "0.3"]) == 0
    point = json.loads((tmp_path / "compare_summary.json").read_text())["points"]["p0.3"]
    assert point["max_rel_dev_analysis_vs_theory"] <= 0.10


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(op):
        raise NumericalError("forced", condition_number=1e20)

    monkeypatch.setattr(cli, "fixed_point", boom)
    assert cli.main(["theory", "--out-dir", str(tmp_path), *QUICK]) == cli.EXIT_NUMERICAL


def test_probe_single_seed(tmp_path):
    assert cli.main(["probe", "--out-dir", str(tmp_path), "--seeds", "1", "--epochs", "3"]) == 0
    rows = read_csv(tmp_path / "probe_seed0_activation.csv")
    assert rows[0] == ["epoch", "layer", "activation_prob"] and len(rows) == 1 + 3 * 3
    assert all(0.0 <= float(r[2]) <= 1.0 for r in rows[1:])
    summary = json.loads((tmp_path / "probe_summary.json").read_text())
    assert summary["spec"]["layers"] == [10, 32, 32, 32, 2]


def test_probe_ten_seed_average(tmp_path):
    assert cli.main(["probe", "--out-dir", str(tmp_path), "--epochs", "4"]) == 0
    per_seed = [np.array([float(r[2]) for r in read_csv(tmp_path / f"probe_seed{s}_activation.csv")[1:]])
                for s in range(10)]
    mean = np.array([float(r[2]) for r in read_csv(tmp_path / "probe_mean_activation.csv")[1:]])
    np.testing.assert_allclose(mean, np.mean(per_seed, axis=0), rtol=1e-15)


def test_probe_dead_layer(tmp_path):
    assert cli.main(["probe", "--out-dir", str(tmp_path), "--seeds", "2", "--epochs", "5", "--dead-layer", "1"]) == 0
    rows = read_csv(tmp_path / "probe_mean_activation.csv")[1:]
    assert all(float(r[2]) < 0.01 for r in rows if r[1] == "2")


def test_probe_divergence_exit(tmp_path):
    assert cli.main(["probe", "--out-dir", str(tmp_path), "--seeds", "1", "--eta", "500",
                     "--epochs", "20"]) == cli.EXIT_NUMERICAL
    summary = json.loads((tmp_path / "probe_summary.json").read_text())
    assert summary["diverged"] == [True]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "dyingrelu", "theory", "--activation-probs", "0.5",
                          "--iters", "5", "--runs", "1", "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "theory_p0.5.json").exists()
