import json
import math

import numpy as np
import pytest

from geoconv.certificates import certificate_from_dict
from geoconv.cli import (
    ExperimentConfig,
    estimate_empirical_rate,
    load_schema,
    main,
    run_experiment,
)
from geoconv.errors import ConfigurationError, InputError
from geoconv.rates import rate_report


def run_cli(tmp_path, *args, config=None):
    argv = []
    if config is not None:
        path = tmp_path / "cfg.yaml"
        path.write_text(config)
        argv += ["--config", str(path)]
    return main(argv + ["--out", str(tmp_path / "out")] + list(args))


def test_empirical_rate_geometric():
    n = np.arange(200)
    er = estimate_empirical_rate(np.tile(0.9**n, (5, 1)))
    assert er.slope == pytest.approx(math.log(0.9), rel=1e-12)
    assert er.ci_low == pytest.approx(er.ci_high, rel=1e-9)


def test_empirical_rate_constant():
    er = estimate_empirical_rate(np.full((3, 50), 2.5))
    assert er.slope == pytest.approx(0.0, abs=1e-15)


def test_empirical_rate_truncates_on_underflow():
    series = 0.5 ** np.arange(100.0)
    series[60:] = 0.0
    er = estimate_empirical_rate(series[None, :])
    assert er.truncated and er.stop == 60
    assert er.slope == pytest.approx(math.log(0.5), rel=1e-12)


def test_empirical_rate_needs_points():
    with pytest.raises(InputError):
        estimate_empirical_rate(np.ones((2, 1)))


def test_minimal_run(tmp_path):
    code = run_cli(tmp_path, "run", "--alpha", "0.005", "--n-iters", "0", "--n-trials", "1")
    assert code == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["results"][0]["trajectory_length"] == 1
    lines = (tmp_path / "out" / "trajectories" / "trial_00000.csv").read_text().splitlines()
    assert lines == ["iter,component_0,psi", "0,0.5,0.70710678118654746"]


def test_headers_and_schema(tmp_path):
    run_cli(tmp_path, "rate", "--alpha", "0.005", "--n-iters", "20", "--n-trials", "4")
    out = tmp_path / "out"
    assert (out / "bounds.csv").read_text().splitlines()[0] == "n,bound,empirical_mean_psi,empirical_q05,empirical_q95"
    import jsonschema

    jsonschema.validate(json.loads((out / "report.json").read_text()), load_schema())


def test_determinism(tmp_path):
    cfg = "alpha: [0.005, 0.01]\nn_iters: 60\nn_trials: 8\nmaster_seed: 42\nanalyses: [rate, deviation]\ndeviation: {N: 10, n_trials: 20}\n"
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    run_cli(a, "run", config=cfg)
    run_cli(b, "run", config=cfg)
    files = sorted(p.relative_to(a / "out") for p in (a / "out").rglob("*.csv"))
    assert len(files) >= 4
    for rel in files:
        assert (a / "out" / rel).read_bytes() == (b / "out" / rel).read_bytes()
    ra = json.loads((a / "out" / "report.json").read_text())
    rb = json.loads((b / "out" / "report.json").read_text())
    ra.pop("metadata")
    rb.pop("metadata")
    assert ra["config"]["output_dir"] != rb["config"]["output_dir"]
    ra["config"].pop("output_dir")
    rb["config"].pop("output_dir")
    assert ra == rb


def test_unknown_key_rejected(tmp_path, capsys):
    assert run_cli(tmp_path, "run", config="alpah: 0.1\n") == 1
    assert "alpah" in capsys.readouterr().err
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"hitting": {"epsilon": 0.1}})


def test_not_admissible_exit_code(tmp_path):
    assert run_cli(tmp_path, "rate", "--alpha", "0.05", "--n-iters", "10", "--n-trials", "2") == 2


def test_inconclusive_exit_code(tmp_path):
    assert run_cli(tmp_path, "rate", "--alpha", "0.01", "--n-iters", "10", "--n-trials", "2", config="n_max: 2\n") == 3


def test_rederive_from_serialized_certificate(tmp_path):
    run_cli(tmp_path, "rate", "--alpha", "0.005", "--n-iters", "10", "--n-trials", "2")
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    cert = certificate_from_dict(rep["certificate"])
    stored = rep["results"][0]["rate"]["rate"]
    again = rate_report(cert, stored["alpha"], stored["search_n_max"])
    assert again.gamma == stored["gamma"] and again.n_star == stored["n_star"]
    assert again.gamma_lower == stored["gamma_lower"]


def test_hitting_subcommand(tmp_path):
    code = run_cli(tmp_path, "hitting-time", "--alpha", "0.005", "--eps", "0.05", "--delta", "0.1", "--zeta", "7.0", "--n-trials", "50", "--n-iters", "5")
    assert code == 0
    hit = json.loads((tmp_path / "out" / "report.json").read_text())["results"][0]["hitting"]
    assert hit["empirical_fraction_within_tau_bar"] >= 0.9
    assert "local" in hit


def test_es_problem_all_analyses(tmp_path):
    cfg = (
        "problem: es-fixed-mean-sphere\nweights: [0.5, 0.5, 0, 0]\ndim: 3\nalpha: 0.01\ntheta0: 1.0\n"
        "n_iters: 100\nn_trials: 20\nanalyses: [meanfield, flow, certify, rate, deviation, stats]\n"
        "es: {n_samples: 100000}\nmeanfield: {n_samples: 20000}\ndeviation: {N: 20, n_trials: 50}\n"
        "stats: {n_samples: 20000}\n"
    )
    assert run_cli(tmp_path, "run", config=cfg) == 0
    res = json.loads((tmp_path / "out" / "report.json").read_text())["results"][0]
    assert res["meanfield"]["es_constants"]["L"] > 0
    assert res["meanfield"]["L_positivity_lower_bound"] > 0
    assert res["flow"]["max_abs_error_vs_closed_form"] < 1e-8
    assert res["deviation"]["psi"]["holds"]
    assert res["stats"]["fourth_moment_bound"] <= res["stats"]["mc_abs_difference"] * 1.05


@pytest.mark.parametrize("sub", ["meanfield", "flow", "certify", "stats", "deviation"])
def test_subcommands_pbil(tmp_path, sub):
    cfg = "deviation: {N: 10, n_trials: 20}\nmeanfield: {n_samples: 10000}\nstats: {n_samples: 10000}\n"
    assert run_cli(tmp_path, sub, "--alpha", "0.01", "--n-iters", "5", "--n-trials", "3", config=cfg) == 0
