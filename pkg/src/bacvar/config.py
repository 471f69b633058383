"""YAML domain configuration files.

A file holds one domain: ``domain: betting`` with the game parameters, or
``domain: road_network`` with junctions, edges, road types and priors.
Loading then dumping a file reproduces the same configuration.
"""
from __future__ import annotations

import os
from importlib import resources
from typing import Union

import yaml

from bacvar.mdp import (BettingConfig, Edge, MdpError, ParametricDomain, RoadNetworkConfig,
                        betting_game_domain, road_network_domain)

DomainConfig = Union[BettingConfig, RoadNetworkConfig]
BUILTIN = {"betting": "betting.yaml", "navigation": "navigation_default.yaml"}


def config_to_dict(cfg: DomainConfig) -> dict:
    if isinstance(cfg, BettingConfig):
        return {
            "domain": "betting",
            "initial_money": cfg.initial_money,
            "bets": list(cfg.bets),
            "stages": cfg.stages,
            "prior": {"alpha": float(cfg.prior_alpha), "beta": float(cfg.prior_beta)},
        }
    return {
        "domain": "road_network",
        "start": cfg.start,
        "goal": cfg.goal,
        "goal_reward": float(cfg.goal_reward),
        "horizon": cfg.horizon,
        "road_types": {t: [[lbl, float(d)] for lbl, d in outs] for t, outs in cfg.road_types.items()},
        "priors": {t: [float(x) for x in p] for t, p in cfg.priors.items()},
        "junctions": list(cfg.junctions),
        "edges": [[e.source, e.target, e.road_type, e.action] for e in cfg.edges],
    }


def config_from_dict(d: dict) -> DomainConfig:
    kind = d.get("domain")
    try:
        if kind == "betting":
            prior = d.get("prior", {})
            base = BettingConfig()
            return BettingConfig(
                initial_money=int(d.get("initial_money", base.initial_money)),
                bets=tuple(int(b) for b in d.get("bets", base.bets)),
                stages=int(d.get("stages", base.stages)),
                prior_alpha=float(prior.get("alpha", base.prior_alpha)),
                prior_beta=float(prior.get("beta", base.prior_beta)),
            )
        if kind == "road_network":
            cfg = RoadNetworkConfig(
                junctions=tuple(d["junctions"]),
                edges=tuple(Edge(*e) for e in d["edges"]),
                start=d["start"],
                goal=d["goal"],
                road_types={t: tuple((str(lbl), float(dur)) for lbl, dur in outs)
                            for t, outs in d["road_types"].items()},
                priors={t: tuple(float(x) for x in p) for t, p in d["priors"].items()},
                goal_reward=float(d.get("goal_reward", 80.0)),
                horizon=int(d.get("horizon", 10)),
            )
            problems = cfg.problems()
            if problems:
                raise MdpError("invalid road network: " + "; ".join(problems))
            return cfg
    except (KeyError, TypeError) as err:
        raise MdpError(f"malformed {kind} config: {err!r}") from err
    raise MdpError(f"unknown domain kind {kind!r}; expected 'betting' or 'road_network'")


def load_config(source: str) -> DomainConfig:
    """Read a YAML file, or a built-in name such as ``betting`` or ``navigation``."""
    if source in BUILTIN:
        text = resources.files("bacvar.data").joinpath(BUILTIN[source]).read_text()
    else:
        if not os.path.exists(source):
            raise MdpError(f"domain config {source!r} not found")
        with open(source) as fh:
            text = fh.read()
    return config_from_dict(yaml.safe_load(text) or {})


def dump_config(cfg: DomainConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def build_domain(cfg: DomainConfig) -> ParametricDomain:
    if isinstance(cfg, BettingConfig):
        return betting_game_domain(cfg)
    return road_network_domain(cfg)


def load_domain(source: str) -> ParametricDomain:
    return build_domain(load_config(source))
