"""Reference agents sharing one environment interface.

An agent owns no model internals (the oracle is the deliberate exception):
``act`` may depend only on what the agent has observed and on its own
random stream, which the episode runner supplies through ``reset``.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .env import Action, ClickModelSpec, ClickVector, optimal_action
from .toprank import TopRankState, choose_action, update

__all__ = [
    "Agent",
    "AGENT_IDS",
    "OracleAgent",
    "RandomAgent",
    "TopRankAgent",
    "CascadeKlUcb",
    "make_agent",
    "oracle_act",
    "random_act",
    "bernoulli_kl",
    "kl_ucb_index",
    "exploration_rate",
]


class Agent(Protocol):
    name: str
    L: int

    def reset(self, rng: np.random.Generator) -> None: ...

    def act(self, t: int) -> Action: ...

    def observe(self, a: Action, clicks: ClickVector) -> None: ...


def oracle_act(model: ClickModelSpec) -> Action:
    """The attraction-sorted ranking, ties broken by ascending item id."""
    return optimal_action(model)


def random_act(L: int, rng: np.random.Generator) -> Action:
    """A uniformly random ranking of all L items."""
    return Action(tuple(int(i) for i in rng.permutation(L) + 1))


class OracleAgent:
    """Plays the attraction-sorted ranking every round (knows alpha)."""

    name = "oracle"

    def __init__(self, model: ClickModelSpec):
        self.L = model.L
        self._action = oracle_act(model)

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, t: int) -> Action:
        return self._action

    def observe(self, a: Action, clicks: ClickVector) -> None:
        pass


class RandomAgent:
    """Plays a fresh uniformly random ranking every round."""

    name = "random"

    def __init__(self, L: int):
        self.L = L
        self._rng: np.random.Generator | None = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, t: int) -> Action:
        return random_act(self.L, self._rng)

    def observe(self, a: Action, clicks: ClickVector) -> None:
        pass


class TopRankAgent:
    """The partial-order learner, wrapped in the episode interface.

    ``last_admitted`` exposes the edges admitted by the latest ``observe``
    so monitors with simulator privileges can watch the relation grow.
    """

    name = "toprank"

    def __init__(self, L: int, K: int, delta: float):
        self.L = L
        self.K = K
        self.delta = delta
        self.state: TopRankState | None = None
        self.last_admitted: list[tuple[int, int]] = []
        self._rng: np.random.Generator | None = None
        self._partition = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self.state = TopRankState(self.L, self.K, self.delta)
        self.last_admitted = []
        self._partition = None

    def act(self, t: int) -> Action:
        self._partition = self.state.partition
        return choose_action(self.state, self._partition, self._rng)

    def observe(self, a: Action, clicks: ClickVector) -> None:
        self.last_admitted = update(self.state, self._partition, a, clicks)


def bernoulli_kl(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q), natural log."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if p == q:
        return 0.0
    if q in (0.0, 1.0):
        return math.inf
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def exploration_rate(t: int) -> float:
    """ln t + 3 ln ln t, with the ln ln term floored at zero for t < 3."""
    if t < 1:
        raise ValueError("t must be >= 1")
    extra = 3.0 * math.log(math.log(t)) if t >= 3 else 0.0
    return math.log(t) + extra


def kl_ucb_index(p_hat: float, count: int, exploration: float, tol: float = 1e-9, max_iter: int = 100) -> float:
    """Largest q in [p_hat, 1] with count * KL(p_hat, q) <= exploration.

    Bisection: KL(p_hat, .) is increasing on [p_hat, 1], so the feasible set
    is an interval starting at p_hat.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if exploration < 0.0:
        raise ValueError("exploration must be nonnegative")
    if p_hat >= 1.0:
        return 1.0
    lo, hi = p_hat, 1.0
    for _ in range(max_iter):
        mid = (lo + hi) / 2.0
        if count * bernoulli_kl(p_hat, mid) <= exploration:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return lo


class CascadeKlUcb:
    """KL-UCB ranker with cascade display accounting.

    Per item it tracks clicks and displays, where a display is a round the
    item sat at a position no deeper than K and no deeper than the round's
    first click (with no click, all K shown positions count). Each round the
    items are ranked by their KL-UCB index, never-displayed items first with
    index 1; ties break by ascending item id, so the agent is deterministic
    given its statistics.
    """

    name = "klucb"

    def __init__(self, L: int, K: int):
        self.L = L
        self.K = K
        self.clicks = np.zeros(L, dtype=np.int64)
        self.displays = np.zeros(L, dtype=np.int64)
        self.t = 0

    def reset(self, rng: np.random.Generator) -> None:
        self.clicks[:] = 0
        self.displays[:] = 0
        self.t = 0

    def index_of(self, item: int, t: int) -> float:
        d = int(self.displays[item - 1])
        if d == 0:
            return 1.0
        return kl_ucb_index(self.clicks[item - 1] / d, d, exploration_rate(t))

    def act(self, t: int) -> Action:
        self.t = t
        order = sorted(
            range(1, self.L + 1), key=lambda i: (-self.index_of(i, t), i)
        )
        return Action(tuple(order))

    def observe(self, a: Action, clicks: ClickVector) -> None:
        shown = a.slots[: self.K]
        depth = self.K
        for pos, item in enumerate(shown, start=1):
            if clicks[item - 1]:
                depth = pos
                break
        for pos in range(depth):
            item = shown[pos]
            self.displays[item - 1] += 1
            self.clicks[item - 1] += int(clicks[item - 1])


AGENT_IDS = ("toprank", "oracle", "random", "klucb")


def make_agent(agent_id: str, model: ClickModelSpec, delta: float) -> Agent:
    """Construct a fresh agent for one episode against ``model``."""
    if agent_id == "toprank":
        return TopRankAgent(model.L, model.K, delta)
    if agent_id == "oracle":
        return OracleAgent(model)
    if agent_id == "random":
        return RandomAgent(model.L)
    if agent_id == "klucb":
        return CascadeKlUcb(model.L, model.K)
    raise ValueError(f"unknown agent {agent_id!r}; choose one of {AGENT_IDS}")
