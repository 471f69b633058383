"""Evaluation harness: episodes in prior-sampled ground truths, metrics, export.

Each episode ``i`` gets three independent streams derived from
``(seed, i)``: one for the ground-truth parameters, one for environment
noise and one for the agent.  Different methods therefore face identical
ground truths, which allows paired comparisons.
"""
from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from bacvar import mcts, pg, vi
from bacvar.belief import Belief
from bacvar.config import build_domain, config_to_dict, load_config
from bacvar.cvar import cvar_standard_error, empirical_cvar

METHODS = ("rabamcp", "bamcp", "cvar-vi-emdp", "cvar-vi-bamdp", "cvar-pg")
METRICS_HEADER = ("method", "episodes", "time_mean", "time_se", "cvar_0.03", "cvar_0.03_se",
                  "cvar_0.2", "cvar_0.2_se", "expected_value", "expected_value_se")
BAMDP_VI_STATE_CAP = 500_000
THETA, ENV, AGENT = 0, 1, 2


class EvaluationError(RuntimeError):
    pass


@dataclass
class PgSettings:
    total_sims: int = 2_000_000
    learning_rate: float = 0.001
    minibatch_size: int = 1000
    num_particles: int = pg.NUM_PARTICLES
    eval_every: int = 0
    eval_episodes: int = 2000


@dataclass
class RunConfig:
    domain: str = "betting"
    method: str = "rabamcp"
    alpha: float = 0.03
    episodes: int = 2000
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None
    search: mcts.SearchConfig = field(default_factory=mcts.SearchConfig)
    grid_points: int = vi.DEFAULT_GRID_POINTS
    pg: PgSettings = field(default_factory=PgSettings)
    label: Optional[str] = None

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def method_label(self) -> str:
        if self.label:
            return self.label
        return "bamcp" if self.method == "bamcp" else f"{self.method}(alpha={self.alpha:g})"

    def search_config(self) -> mcts.SearchConfig:
        s = self.search
        alpha = 1.0 if self.method == "bamcp" else self.alpha
        return mcts.SearchConfig(**{**asdict(s), "alpha": alpha, "seed": self.seed})


@dataclass
class MetricsRow:
    method: str
    episodes: int
    time_mean: float
    time_se: float
    cvar_003: float
    cvar_003_se: float
    cvar_02: float
    cvar_02_se: float
    expected_value: float
    expected_value_se: float

    def as_list(self) -> list:
        return [self.method, self.episodes, self.time_mean, self.time_se, self.cvar_003, self.cvar_003_se,
                self.cvar_02, self.cvar_02_se, self.expected_value, self.expected_value_se]

    def monotone(self, tol: float = 1e-9) -> bool:
        return self.cvar_003 <= self.cvar_02 + tol and self.cvar_02 <= self.expected_value + tol


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def compute_metrics(label: str, returns, times) -> MetricsRow:
    r = np.asarray(returns, dtype=float)
    t = np.asarray(times, dtype=float)
    return MetricsRow(label, int(r.size), float(t.mean()), _se(t),
                      empirical_cvar(r, 0.03), cvar_standard_error(r, 0.03),
                      empirical_cvar(r, 0.2), cvar_standard_error(r, 0.2),
                      float(r.mean()), _se(r))


def episode_rngs(seed: int, episode: int):
    return tuple(np.random.default_rng([seed, episode, k]) for k in (THETA, ENV, AGENT))


# ---------------------------------------------------------------------------
# Method preparation (done once) and per-episode execution


@dataclass
class Prepared:
    cfg: RunConfig
    domain: object
    setup_seconds: float = 0.0
    table: Optional[vi.ValueTable] = None
    rollout: Optional[object] = None
    params: Optional[pg.PolicyParams] = None
    models: Optional[np.ndarray] = None
    curve: Optional[pg.TrainingCurve] = None


def prepare(cfg: RunConfig) -> Prepared:
    domain = build_domain(load_config(cfg.domain))
    prep = Prepared(cfg, domain)
    start = time.perf_counter()
    grid = vi.make_grid(cfg.alpha, cfg.grid_points)
    if cfg.method in ("rabamcp", "bamcp"):
        alpha = 1.0 if cfg.method == "bamcp" else cfg.alpha
        prep.rollout = mcts.emdp_rollout_policy(domain, alpha)
    elif cfg.method == "cvar-vi-emdp":
        prep.table = vi.solve_mdp(Belief.from_prior(domain).expected_mdp(), cfg.alpha, grid)
    elif cfg.method == "cvar-vi-bamdp":
        try:
            prep.table = vi.solve_bamdp(domain, cfg.alpha, grid, max_states=BAMDP_VI_STATE_CAP)
        except vi.StateSpaceTooLarge as err:
            raise EvaluationError(f"cvar-vi-bamdp is limited to small domains: {err}") from err
    elif cfg.method == "cvar-pg":
        s = cfg.pg
        init = pg.init_from_vi(domain, cfg.alpha, s.num_particles, learning_rate=s.learning_rate,
                               minibatch_size=s.minibatch_size)
        prep.params, prep.curve, prep.models = pg.train(
            domain, cfg.alpha, init, s.total_sims, np.random.default_rng([cfg.seed, 10 ** 9]),
            eval_every=s.eval_every, eval_episodes=s.eval_episodes)
    prep.setup_seconds = time.perf_counter() - start
    return prep


def run_episode(prep: Prepared, episode: int) -> Tuple[float, float]:
    """Return and agent compute seconds of one episode."""
    cfg, domain = prep.cfg, prep.domain
    theta_rng, env_rng, agent_rng = episode_rngs(cfg.seed, episode)
    theta = Belief.from_prior(domain).sample_theta(theta_rng)
    try:
        if cfg.method in ("rabamcp", "bamcp"):
            traj, secs = mcts.act_online(domain, cfg.search_config(), agent_rng, theta, env_rng=env_rng,
                                         rollout_policy=prep.rollout)
        elif cfg.method in ("cvar-vi-emdp", "cvar-vi-bamdp"):
            start = time.perf_counter()
            traj = vi.execute_policy(prep.table, domain, cfg.alpha, theta, env_rng,
                                     bayes=cfg.method == "cvar-vi-bamdp")
            secs = time.perf_counter() - start
        else:
            start = time.perf_counter()
            traj = pg.act_episode(domain, prep.params, prep.models, theta, env_rng)
            secs = time.perf_counter() - start
    except Exception as err:
        raise EvaluationError(f"episode {episode} (seed {cfg.seed}) failed: {err!r}") from err
    return traj.total_return, secs


_WORKER_PREP: Optional[Prepared] = None


def _worker(episode: int):
    return run_episode(_WORKER_PREP, episode)


@dataclass
class EvaluationResult:
    metrics: MetricsRow
    returns: np.ndarray
    times: np.ndarray
    config: RunConfig
    setup_seconds: float = 0.0


def run_evaluation(cfg: RunConfig, prep: Optional[Prepared] = None) -> EvaluationResult:
    global _WORKER_PREP
    prep = prep or prepare(cfg)
    episodes = list(range(cfg.episodes))
    if cfg.workers > 1 and "fork" in mp.get_all_start_methods():
        _WORKER_PREP = prep
        with mp.get_context("fork").Pool(cfg.workers) as pool:
            out = pool.map(_worker, episodes)
        _WORKER_PREP = None
    else:
        out = [run_episode(prep, i) for i in episodes]
    returns = np.array([r for r, _ in out])
    times = np.array([t for _, t in out])
    res = EvaluationResult(compute_metrics(cfg.method_label, returns, times), returns, times, cfg,
                           prep.setup_seconds)
    if cfg.out:
        export(res, cfg.out)
    return res


def expansion_configs(cfg: RunConfig) -> Tuple[RunConfig, RunConfig]:
    """BO expansions at the configured budget and random expansions at twice that budget."""
    if cfg.method != "rabamcp":
        raise ValueError("the expansion ablation applies to rabamcp only")
    bo = RunConfig(**{**_shallow(cfg), "out": None, "label": f"rabamcp-bo(alpha={cfg.alpha:g})",
                      "search": mcts.SearchConfig(**{**asdict(cfg.search), "expansion_mode": mcts.BAYESOPT})})
    rnd = RunConfig(**{**_shallow(cfg), "out": None, "label": f"rabamcp-random(alpha={cfg.alpha:g})",
                       "search": mcts.SearchConfig(**{**asdict(cfg.search), "expansion_mode": mcts.RANDOM,
                                                      "sims_initial": 2 * cfg.search.sims_initial,
                                                      "sims_step": 2 * cfg.search.sims_step})})
    return bo, rnd


def ablation_random_expansion(cfg: RunConfig) -> Tuple[EvaluationResult, EvaluationResult]:
    bo, rnd = expansion_configs(cfg)
    prep = prepare(bo)
    a = run_evaluation(bo, prep)
    prep.cfg = rnd
    b = run_evaluation(rnd, prep)
    if cfg.out:
        export_many([a, b], cfg.out)
    return a, b


def _shallow(cfg: RunConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def paired_cvar_test(a, b, alpha: float, n_boot: int = 10_000, rng=None) -> Dict[str, float]:
    """One-sided paired bootstrap test of ``CVaR(a) > CVaR(b)``.

    Episodes are resampled jointly; the p-value is the share of resamples
    in which the difference is not positive.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    rng = rng or np.random.default_rng(0)
    n = a.size
    k = max(1, math.ceil(alpha * n - 1e-9))
    idx = rng.integers(0, n, size=(n_boot, n))
    ta = np.sort(a[idx], axis=1)[:, :k].mean(axis=1)
    tb = np.sort(b[idx], axis=1)[:, :k].mean(axis=1)
    diff = ta - tb
    return {"difference": empirical_cvar(a, alpha) - empirical_cvar(b, alpha),
            "p_value": float((np.sum(diff <= 0) + 1) / (n_boot + 1))}


def paired_mean_test(a, b) -> Dict[str, float]:
    """One-sided paired t-test of ``mean(a) > mean(b)``."""
    from scipy import stats

    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if np.allclose(d, d[0]):
        return {"difference": float(d.mean()), "p_value": 0.0 if d[0] > 0 else 1.0}
    t = stats.ttest_1samp(d, 0.0, alternative="greater")
    return {"difference": float(d.mean()), "p_value": float(t.pvalue)}


# ---------------------------------------------------------------------------
# Export


def fingerprint() -> dict:
    return {"python": sys.version.split()[0], "numpy": np.__version__, "platform": platform.platform(),
            "processor": platform.machine()}


def write_metrics_csv(rows: List[MetricsRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.as_list())


def write_returns(res: EvaluationResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "seconds"])
        for i, (r, t) in enumerate(zip(res.returns, res.times)):
            w.writerow([i, repr(float(r)), repr(float(t))])


def read_returns(path: str) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["return"]) for r in rows]), np.array([float(r["seconds"]) for r in rows])


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    try:
        d["domain_config"] = config_to_dict(load_config(cfg.domain))
    except Exception:  # the domain was already validated when the run started
        pass
    return d


def export_many(results: List[EvaluationResult], out: str) -> Dict[str, str]:
    """Write ``metrics.csv``, one returns file per run and ``results.json`` under ``out``."""
    try:
        os.makedirs(out, exist_ok=True)
        paths = {"metrics": os.path.join(out, "metrics.csv"), "json": os.path.join(out, "results.json")}
        write_metrics_csv([r.metrics for r in results], paths["metrics"])
        runs = []
        for i, r in enumerate(results):
            name = "returns.csv" if len(results) == 1 else f"returns_{i}.csv"
            p = os.path.join(out, name)
            write_returns(r, p)
            paths[f"returns_{i}"] = p
            runs.append({"config": config_dict(r.config), "metrics": asdict(r.metrics), "returns_file": name,
                         "setup_seconds": r.setup_seconds})
        with open(paths["json"], "w") as fh:
            json.dump({"runs": runs, "environment": fingerprint()}, fh, indent=2)
    except OSError as err:
        raise EvaluationError(f"cannot write results to {out!r}: {err}") from err
    return paths


def export(res: EvaluationResult, out: str, fmt: str = "all") -> Dict[str, str]:
    if fmt not in ("all", "csv", "json"):
        raise ValueError("format must be 'all', 'csv' or 'json'")
    return export_many([res], out)
