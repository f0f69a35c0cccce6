"""Run configuration files: strict, versioned JSON.

Unknown keys anywhere in the document are rejected so that a config file is
an exact, reproducible record of a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .mcts import SearchConfig
from .nets import NetConfig
from .rewards import LAGRANGIAN, RewardMode
from .training import TrainConfig

RUN_SCHEMA = "ratectl-run/1"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    corpus: str = ""
    out: str = "runs/latest"
    reward: RewardMode = RewardMode()
    net: NetConfig = field(default_factory=NetConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_targets: tuple[float, ...] | None = None


def _build(cls, doc: dict, where: str, renames: dict[str, str] | None = None):
    renames = renames or {}
    allowed = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        name = renames.get(key, key)
        if name not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    if doc.get("schema") != RUN_SCHEMA:
        raise ConfigError(f"unsupported run config schema {doc.get('schema')!r}")
    top_allowed = {"schema", "seed", "corpus", "out", "reward", "net",
                   "search", "train", "eval_targets"}
    for key in doc:
        if key not in top_allowed:
            raise ConfigError(f"unknown key {key!r} in run config")

    reward = _build(RewardMode, doc.get("reward", {}), "reward",
                    renames={"mode": "kind", "lambda": "lam"})
    net = _build(NetConfig, doc.get("net", {}), "net")
    search = _build(SearchConfig, doc.get("search", {}), "search")
    train = _build(TrainConfig, doc.get("train", {}), "train")
    if "seed" in doc:
        train = replace(train, seed=doc["seed"])
    # Lagrangian returns are unbounded, so the value squash comes off.
    if reward.kind == LAGRANGIAN and net.value_squash:
        net = replace(net, value_squash=False)

    eval_targets = doc.get("eval_targets")
    return RunConfig(
        seed=doc.get("seed", 0),
        corpus=doc.get("corpus", ""),
        out=doc.get("out", "runs/latest"),
        reward=reward,
        net=net,
        search=search,
        train=train,
        eval_targets=tuple(eval_targets) if eval_targets is not None else None,
    )


def load_run_config(path: str | Path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return run_config_from_dict(doc)
