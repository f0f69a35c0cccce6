"""pUCT Monte-Carlo tree search over the learned model.

After the root is built from the real observation, the search touches only
the representation / dynamics / prediction networks; the encoder simulator is
never consulted. Intermediate rewards are zero and the discount is 1, so leaf
value estimates back up unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nets import (
    NetConfig,
    NumpyOps,
    featurize,
    policy_logits_forward,
    repr_forward,
    softmax,
    value_quantiles_forward,
)
from .sim import ObservationBundle


@dataclass(frozen=True)
class SearchConfig:
    simulations: int = 200
    c1: float = 1.25
    c2: float = 19652.0
    dirichlet_alpha: float = 0.3
    noise_frac: float = 0.25
    target_temperature: float = 1.0   # temperature of the stored policy target
    act_temp_init: float = 1.0        # acting temperature schedule (episode-indexed)
    act_temp_final: float = 0.1
    act_temp_episodes: int = 2000

    def __post_init__(self):
        if self.simulations < 1:
            raise ConfigError("simulations must be >= 1")
        if self.target_temperature <= 0:
            raise ConfigError("target_temperature must be positive")

    def act_temperature(self, episode_index: int) -> float:
        """Linear decay from act_temp_init to act_temp_final."""
        if self.act_temp_episodes <= 0:
            return self.act_temp_final
        frac = min(1.0, episode_index / self.act_temp_episodes)
        return self.act_temp_init + (self.act_temp_final - self.act_temp_init) * frac


class NetModel:
    """Learned-model interface used by the search.

    The action branch of the dynamics network does not depend on the state
    embedding, so its output is precomputed for every action bin up front;
    each recurrent call is then an add plus the residual stack and heads.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: NetConfig):
        from .nets import _mlp

        self.params = params
        self.cfg = cfg
        self._ops = NumpyOps(params)
        self._action_table = _mlp(self._ops, np.eye(cfg.action_bins), "dyn")

    @property
    def action_count(self) -> int:
        return self.cfg.action_bins

    def initial(self, observation) -> tuple[np.ndarray, np.ndarray, float]:
        if isinstance(observation, ObservationBundle):
            x = featurize(observation, self.cfg)
        else:
            x = np.asarray(observation, dtype=np.float64)
        h = repr_forward(self._ops, x[None, :], self.cfg)
        return self._evaluate(h)

    def recurrent(self, embedding: np.ndarray, action: int) -> tuple[np.ndarray, np.ndarray, float]:
        from .nets import _res

        h = embedding[None, :] + self._action_table[action]
        h = _res(self._ops, h, "dyn", self.cfg.res_blocks)
        return self._evaluate(h)

    def _evaluate(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        policy = softmax(policy_logits_forward(self._ops, h, self.cfg)[0])
        value_q = value_quantiles_forward(self._ops, h, self.cfg)[0]
        return h[0], policy, float(value_q.mean())


class _Node:
    __slots__ = ("embedding", "priors", "visits", "value_sum", "children", "total")

    def __init__(self, embedding: np.ndarray, priors: np.ndarray):
        self.embedding = embedding
        self.priors = priors
        self.visits = np.zeros(len(priors))
        self.value_sum = np.zeros(len(priors))
        self.children: list[_Node | None] = [None] * len(priors)
        self.total = 0


class _MinMax:
    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def update(self, v: float) -> None:
        self.lo = min(self.lo, v)
        self.hi = max(self.hi, v)

    def normalize(self, v: np.ndarray) -> np.ndarray:
        if self.hi > self.lo:
            return (v - self.lo) / (self.hi - self.lo)
        return v


def _select(node: _Node, cfg: SearchConfig, minmax: _MinMax) -> int:
    n_total = node.total
    visited = node.visits > 0
    q = np.where(visited, node.value_sum / np.maximum(node.visits, 1.0), 0.0)
    q = np.where(visited, minmax.normalize(q), 0.0)
    c = cfg.c1 + math.log((n_total + cfg.c2 + 1.0) / cfg.c2)
    u = node.priors * (math.sqrt(max(n_total, 1.0)) * c) / (1.0 + node.visits)
    return int(np.argmax(q + u))   # argmax ties break to the lowest action


def mcts_search(observation, model, search_config: SearchConfig,
                rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Run the search; returns (policy target over actions, root value).

    The policy target is the root visit-count distribution raised to
    1 / target_temperature. Root priors are mixed with Dirichlet noise when
    noise_frac > 0.
    """
    embedding, priors, _ = model.initial(observation)
    if search_config.noise_frac > 0.0:
        noise = rng.dirichlet([search_config.dirichlet_alpha] * len(priors))
        priors = (1.0 - search_config.noise_frac) * priors + search_config.noise_frac * noise
    root = _Node(embedding, priors)
    minmax = _MinMax()

    for _ in range(search_config.simulations):
        node = root
        path: list[tuple[_Node, int]] = []
        while True:
            action = _select(node, search_config, minmax)
            path.append((node, action))
            child = node.children[action]
            if child is None:
                emb, child_priors, value = model.recurrent(node.embedding, action)
                node.children[action] = _Node(emb, child_priors)
                break
            node = child
        for parent, action in path:
            parent.visits[action] += 1.0
            parent.value_sum[action] += value
            parent.total += 1
            minmax.update(parent.value_sum[action] / parent.visits[action])

    visits = root.visits
    if search_config.target_temperature == 1.0:
        target = visits / visits.sum()
    else:
        scaled = visits ** (1.0 / search_config.target_temperature)
        target = scaled / scaled.sum()
    root_value = float(root.value_sum.sum() / visits.sum())
    return target, root_value


def sample_from_visits(policy_target: np.ndarray, temperature: float,
                       rng: np.random.Generator) -> int:
    """Sample an action from a visit distribution at the given temperature."""
    if temperature <= 1e-3:
        return int(np.argmax(policy_target))
    p = np.maximum(policy_target, 0.0) ** (1.0 / temperature)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))
