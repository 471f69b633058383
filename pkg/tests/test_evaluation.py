import csv
import json

import numpy as np
import pytest

from bacvar import evaluation, mcts
from bacvar.evaluation import RunConfig

FAST = mcts.SearchConfig(sims_initial=200, sims_step=50)
FAST_PG = evaluation.PgSettings(total_sims=2000, minibatch_size=200, num_particles=5, eval_episodes=100)


def quick(method, **kw):
    return RunConfig(method=method, alpha=kw.pop("alpha", 0.2), episodes=kw.pop("episodes", 3), search=FAST,
                     pg=FAST_PG, **kw)


@pytest.mark.parametrize("method", evaluation.METHODS)
def test_every_method_runs_deterministically(method):
    a = evaluation.run_evaluation(quick(method, seed=4))
    b = evaluation.run_evaluation(quick(method, seed=4))
    np.testing.assert_array_equal(a.returns, b.returns)
    assert a.metrics.episodes == 3 and a.metrics.monotone()


def test_ground_truths_shared_across_methods():
    th = [evaluation.episode_rngs(7, i)[0].random() for i in range(3)]
    again = [evaluation.episode_rngs(7, i)[0].random() for i in range(3)]
    assert th == again and len(set(th)) == 3


def test_never_bet_policy_returns_ten():
    res = evaluation.run_evaluation(quick("cvar-vi-bamdp", alpha=0.03, episodes=20))
    np.testing.assert_array_equal(res.returns, 10.0)
    assert res.metrics.cvar_003_se == 0.0


def test_export_files(tmp_path):
    res = evaluation.run_evaluation(quick("cvar-vi-emdp", episodes=5, out=str(tmp_path)))
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert tuple(rows[0]) == evaluation.METRICS_HEADER
    assert float(rows[1][8]) == pytest.approx(res.metrics.expected_value)
    returns, secs = evaluation.read_returns(str(tmp_path / "returns.csv"))
    assert len(returns) == 5 and np.all(secs >= 0)
    again = evaluation.compute_metrics(res.metrics.method, returns, secs)
    assert again == res.metrics
    doc = json.loads((tmp_path / "results.json").read_text())
    run = doc["runs"][0]
    assert run["config"]["method"] == "cvar-vi-emdp" and run["config"]["domain_config"]["domain"] == "betting"
    assert "python" in doc["environment"]


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = evaluation.run_evaluation(quick("cvar-vi-emdp", episodes=2))
    with pytest.raises(evaluation.EvaluationError):
        evaluation.export(res, str(blocker / "sub"))


def test_metrics_example():
    row = evaluation.compute_metrics("m", list(range(100)), [1.0] * 100)
    assert row.cvar_003 == pytest.approx(1.0)
    assert row.cvar_02 == pytest.approx(9.5)
    assert row.expected_value == pytest.approx(49.5)
    assert row.time_se == 0.0 and row.monotone()


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(method="nope")
    with pytest.raises(ValueError):
        RunConfig(alpha=0.0)
    with pytest.raises(ValueError):
        RunConfig(episodes=0)
    assert RunConfig(method="bamcp", alpha=0.2).search_config().alpha == 1.0


def test_workers_match_serial():
    a = evaluation.run_evaluation(quick("rabamcp", episodes=4, seed=2))
    b = evaluation.run_evaluation(quick("rabamcp", episodes=4, seed=2, workers=2))
    np.testing.assert_array_equal(a.returns, b.returns)


def test_paired_cvar_test():
    rng = np.random.default_rng(0)
    base = rng.normal(size=400)
    better = evaluation.paired_cvar_test(base + 1.0, base, 0.2)
    assert better["difference"] == pytest.approx(1.0) and better["p_value"] < 0.01
    same = evaluation.paired_cvar_test(base, base, 0.2)
    assert same["p_value"] == 1.0


def test_paired_mean_test():
    rng = np.random.default_rng(1)
    a = rng.normal(size=200)
    assert evaluation.paired_mean_test(a + 0.5, a)["p_value"] == 0.0
    assert evaluation.paired_mean_test(a + 0.3 + 0.1 * rng.normal(size=200), a)["p_value"] < 1e-6
    with pytest.raises(ValueError):
        evaluation.paired_cvar_test(a, a[:10], 0.2)


def test_ablation_runs_both_arms(tmp_path):
    cfg = quick("rabamcp", episodes=2, out=str(tmp_path))
    bo, rnd = evaluation.ablation_random_expansion(cfg)
    assert rnd.config.search.sims_initial == 2 * bo.config.search.sims_initial
    assert rnd.config.search.expansion_mode == mcts.RANDOM
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert len(rows) == 3 and (tmp_path / "returns_1.csv").exists()
