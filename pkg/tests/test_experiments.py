import csv
import json

import numpy as np
import pytest

from minimax_bayes.beliefs import dirac
from minimax_bayes.cli import DEFAULTS, load_config, main
from minimax_bayes.experiments import (benchmark_pair, config_hash, random_task, run_compare16,
                                       run_three_mdp_grid, run_two_mdp_curve)
from minimax_bayes.mdp import FiniteMDP, load_mdps
from minimax_bayes.regret import bayes_optimal_tree, regrets


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture(scope="module")
def curve():
    return run_two_mdp_curve(benchmark_pair(), n_grid=21, seed=0, cut_iterations=15, psrl_mc=4000)


def test_two_mdp_curve_orderings(curve):
    h = curve.header
    data = np.array(curve.rows, dtype=float)
    env = data[:, h.index("bayes_optimal")]
    lines = data[:, [i for i, c in enumerate(h) if c.startswith("response_")]]
    assert lines.shape[1] >= 2
    assert np.all(env[:, None] <= lines + 1e-10)
    psrl, se = data[:, h.index("psrl_mc")], data[:, h.index("psrl_se")]
    assert np.all(psrl >= env - 3 * se - 1e-12)
    assert np.all(data[:, h.index("psrl_exact")] >= env - 1e-10)
    # the envelope peaks at the minimax value, which the mixture attains everywhere
    assert env.max() <= curve.minimax_value + 1e-9
    mix = data[:, h.index("minimax_mixture")]
    assert np.all(mix <= curve.minimax_value + 1e-9)


def test_mixture_line_constant_on_mirrored_task():
    # two mirrored one-state tasks: the minimax mixture has equal regret under both
    p = np.ones((1, 2, 1))
    mdps = [FiniteMDP(p, np.array([[1.0, 0.0]]), 1), FiniteMDP(p, np.array([[0.0, 1.0]]), 1)]
    res = run_two_mdp_curve(mdps, n_grid=11, seed=0, cut_iterations=10, psrl_mc=500)
    data = np.array(res.rows, dtype=float)
    mix = data[:, res.header.index("minimax_mixture")]
    assert np.ptp(mix) < 1e-6
    np.testing.assert_allclose(res.mixture_weights, [0.5, 0.5], atol=1e-9)


def test_three_mdp_grid():
    mdps = random_task(3, 0, 3, 2, 3)
    header, rows = run_three_mdp_grid(mdps, 0.1)
    data = np.array(rows)
    assert len(data) == 66
    beta, value, grads = data[:, :3], data[:, 3], data[:, 4:7]
    np.testing.assert_allclose((beta * grads).sum(axis=1), value, atol=1e-10)
    np.testing.assert_allclose(data[:, 7:10].sum(axis=1), 0.0, atol=1e-12)
    for k in range(3):
        row = np.argmax(np.all(np.isclose(beta, dirac(3, k)), axis=1))
        tree, _ = bayes_optimal_tree(mdps, beta[row])
        np.testing.assert_allclose(grads[row], regrets(tree, mdps), atol=1e-12)
    # concavity: each point's value is below every other point's plane
    planes = grads @ beta.T
    assert np.all(value[None, :] <= planes + 1e-9)


def test_compare16_small():
    rows = run_compare16(seeds=[21], n_mdps=4, horizon=3, cut_iterations=10)
    r = rows[0]
    assert 0 <= r.minimax <= 3 and 0 <= r.uniform <= 3
    assert r.minimax <= r.uniform + 1e-12
    mdps = random_task(4, 21, 3, 2, 3, 0.9)
    tree, _ = bayes_optimal_tree(mdps, np.full(4, 0.25))
    assert r.uniform == pytest.approx(regrets(tree, mdps).max(), abs=1e-12)


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit):
        load_config("cutplane", str(path), {})
    path.write_text(json.dumps({"iters": 3}))
    assert load_config("cutplane", str(path), {"iters": None})["iters"] == 3
    assert set(DEFAULTS) == {"gen-mdps", "two-mdp-curve", "three-mdp-grid", "compare16", "gda", "cutplane",
                             "bandit-surface", "bandit-worstcase"}


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})


def run(argv):
    assert main(argv) == 0


def test_cli_gen_and_cutplane_reproducible(tmp_path, capsys):
    out = tmp_path / "o"
    run(["--seed", "3", "--out-dir", str(out), "gen-mdps", "--n-mdps", "2"])
    mdps = load_mdps(out / "mdps.json")
    assert len(mdps) == 2 and mdps[0].horizon == 5
    for name in ("a.json", "b.json"):
        run(["cutplane", "--mdps", str(out / "mdps.json"), "--iters", "4", "--seed", "1",
             "--out-dir", str(out), "--out", name])
    assert (out / "a.json").read_bytes() == (out / "b.json").read_bytes()
    record = json.loads((out / "a.json").read_text())
    assert {"beta_star", "cuts", "centroids", "policy_ids", "mixture"} <= set(record)
    manifest = json.loads((out / "cutplane.manifest.json").read_text())
    assert {"config", "config_sha256", "seed", "version"} <= set(manifest)
    assert manifest["seed"] == 1


def test_cli_gda_finite(tmp_path):
    cfg = tmp_path / "gda.json"
    cfg.write_text(json.dumps({"iterations": 20}))
    run(["gda", "--config", str(cfg), "--out-dir", str(tmp_path), "--out", "trace.csv"])
    header, data = read_csv(tmp_path / "trace.csv")
    assert header[:5] == ["iter", "bayes_regret_est", "worst_case_regret", "gpi_norm", "gbeta_norm"]
    assert len(data) == 20
    result = json.loads((tmp_path / "gda_result.json").read_text())
    assert abs(sum(result["belief"]) - 1) < 1e-12


def test_cli_gda_dirichlet(tmp_path):
    cfg = tmp_path / "gda.json"
    cfg.write_text(json.dumps({"belief_kind": "dirichlet",
                               "dirichlet": {"iterations": 5, "n_eval": 200, "horizon": 4}}))
    run(["gda", "--config", str(cfg), "--out-dir", str(tmp_path)])
    with open(tmp_path / "gda_robustness.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["policy", "prior", "mean", "se", "median", "p999"]
    assert len(rows) == 1 + 3 * 6


def test_cli_small_runs(tmp_path):
    run(["--out-dir", str(tmp_path), "two-mdp-curve"] + ["--config", str(_write(tmp_path, "t.json",
        {"n_grid": 5, "cut_iterations": 5, "psrl_mc": 200}))])
    header, data = read_csv(tmp_path / "two_mdp_curve.csv")
    assert header[:2] == ["beta_0", "bayes_optimal"] and len(data) == 5
    run(["three-mdp-grid", "--out-dir", str(tmp_path), "--config",
         str(_write(tmp_path, "g.json", {"resolution": 0.25, "horizon": 3}))])
    header, data = read_csv(tmp_path / "three_mdp_grid.csv")
    assert len(data) == 15
    run(["compare16", "--out-dir", str(tmp_path), "--config",
         str(_write(tmp_path, "c.json", {"seeds": [0], "n_mdps": 3, "horizon": 2, "cut_iterations": 3}))])
    header, data = read_csv(tmp_path / "compare16.csv")
    assert header[1:3] == ["minimax_worst_regret", "uniform_worst_regret"]
    run(["bandit-surface", "--out-dir", str(tmp_path), "--config",
         str(_write(tmp_path, "b.json", {"a2": [1.0], "b2": [1.0, 2.0], "n_mc": 100, "horizon_trunc": 20}))])
    header, data = read_csv(tmp_path / "bandit_surface.csv")
    assert header == ["a2", "b2", "regret", "se"] and len(data) == 2
    run(["bandit-worstcase", "--out-dir", str(tmp_path), "--threads", "1", "--config",
         str(_write(tmp_path, "w.json", {"a_grid": [0.5, 1.0], "n_mc": 100, "horizon_trunc": 20}))])
    header, data = read_csv(tmp_path / "bandit_worstcase.csv")
    assert header == ["a", "regret", "se"] and len(data) == 2


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path
