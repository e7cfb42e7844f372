"""Executable forms of the learner's quantitative guarantees.

Everything here evaluates or stress-tests a claim empirically: closed-form
regret ceilings, Monte-Carlo verification of the self-normalized
concentration boundary, conditional pairwise-bias estimation against an
exhaustive enumeration oracle, hard minimax instances, and run monitors
that watch (with simulator privileges: alpha is known) for wrongly admitted
relation edges.

Verification reports are plain dicts with the keys
``{check, parameters, statistic, bound, pass}``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .baselines import TopRankAgent
from .env import (
    Action,
    CapacityError,
    ClickModelSpec,
    Family,
    MAX_ENUM_ITEMS,
    click_prob,
    document_model,
    sample_clicks,
)
from .harness import run_episode
from .toprank import CONFIDENCE_C, Partition, sample_action

__all__ = [
    "UndefinedEstimateError",
    "BoundInputs",
    "theorem1_bound",
    "theorem1_minimax_bound",
    "ConcentrationTrialSpec",
    "concentration_mc",
    "concentration_report",
    "BiasEstimate",
    "pairwise_bias_estimate",
    "pairwise_bias_exact",
    "lemma1_report",
    "LowerBoundInstance",
    "make_lowerbound_instance",
    "theorem2_lower_bound",
    "first_wrong_edge",
    "TopRankRunMonitor",
    "run_wrong_edge_trial",
    "wrong_edge_frequency",
]


class UndefinedEstimateError(RuntimeError):
    """A conditional estimate had no nonzero outcomes to condition on."""


# ---------------------------------------------------------------------------
# Regret ceilings


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the gap-dependent regret ceiling.

    The gap-dependent form needs strictly decreasing alpha (every pairwise
    gap positive); that is checked at evaluation time, not here, so the same
    container can feed checks that only need alpha in [0, 1]^L.
    """

    alpha: tuple[float, ...]
    K: int
    n: int
    delta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if any(not 0.0 <= a <= 1.0 for a in self.alpha):
            raise ValueError("alpha entries must lie in [0, 1]")
        if not 1 <= self.K <= len(self.alpha):
            raise ValueError(f"K must satisfy 1 <= K <= L={len(self.alpha)}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def L(self) -> int:
        return len(self.alpha)

    def gap(self, i: int, j: int) -> float:
        return self.alpha[i - 1] - self.alpha[j - 1]


def theorem1_bound(b: BoundInputs) -> float:
    """Gap-dependent regret ceiling.

    delta n K L^2, plus for every worse item j and every better item i that
    can be shown (i <= min(K, j - 1)) the term
    ``1 + 6 (alpha_i + alpha_j) ln(c sqrt(n) / delta) / (alpha_i - alpha_j)``.
    Natural log, exact confidence constant.
    """
    alpha, K, L = b.alpha, b.K, b.L
    if any(alpha[x] <= alpha[x + 1] for x in range(L - 1)):
        raise ValueError("the gap-dependent ceiling needs strictly decreasing alpha")
    log_term = math.log(CONFIDENCE_C * math.sqrt(b.n) / b.delta)
    total = b.delta * b.n * K * L * L
    for j in range(2, L + 1):
        for i in range(1, min(K, j - 1) + 1):
            total += 1.0 + 6.0 * (alpha[i - 1] + alpha[j - 1]) * log_term / b.gap(i, j)
    return total


def theorem1_minimax_bound(K: int, L: int, n: int, delta: float) -> float:
    """Gap-free regret ceiling: delta n K L^2 + K L + sqrt(4 K^3 L n ln(c sqrt(n)/delta))."""
    if not 1 <= K <= L:
        raise ValueError(f"K must satisfy 1 <= K <= L={L}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    log_term = math.log(CONFIDENCE_C * math.sqrt(n) / delta)
    return delta * n * K * L * L + K * L + math.sqrt(4.0 * K**3 * L * n * log_term)


# ---------------------------------------------------------------------------
# Self-normalized concentration (Monte Carlo)


@dataclass(frozen=True)
class ConcentrationTrialSpec:
    """Trial plan for the boundary-crossing experiment.

    Steps take values in {-1, 0, +1} with the given probabilities. An
    optional ``adapt`` callable makes the sequence adapted: it receives
    ``(t, S, N)`` (the statistics before step t) and returns that step's
    ``(p_neg, p_zero, p_pos)``; the boundary claim covers this case too.
    """

    n: int
    p_neg: float
    p_zero: float
    p_pos: float
    trials: int
    delta: float
    adapt: Callable[[int, float, int], tuple[float, float, float]] | None = None

    def __post_init__(self) -> None:
        if self.n < 1 or self.trials < 1:
            raise ValueError("n and trials must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        probs = (self.p_neg, self.p_zero, self.p_pos)
        if any(p < 0.0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("step probabilities must be nonnegative and sum to 1")

    @property
    def conditional_step_mean(self) -> float:
        """E[X | X != 0]: zero when the step is almost surely zero."""
        return _conditional_mean(self.p_neg, self.p_pos)


def _conditional_mean(p_neg: float, p_pos: float) -> float:
    mass = p_neg + p_pos
    return (p_pos - p_neg) / mass if mass > 0.0 else 0.0


_CHUNK_CELLS = 4_000_000  # bound the (trials x n) working set per chunk


def concentration_mc(spec: ConcentrationTrialSpec, rng: np.random.Generator) -> float:
    """Fraction of simulated sequences that ever cross the admission boundary.

    Each trial draws X_1..X_n, centers by the conditional step mean mu_t
    (S_t = sum of X_s - mu_s |X_s|, N_t = sum of |X_s|), and records whether
    ``|S_t| >= sqrt(2 N_t ln(c sqrt(N_t) / delta))`` held at any t <= n with
    N_t > 0. The claimed ceiling for this frequency is delta.
    """
    if spec.adapt is not None:
        return _concentration_mc_adapted(spec, rng)
    crossings = 0
    mu = spec.conditional_step_mean
    chunk = max(1, min(spec.trials, _CHUNK_CELLS // spec.n))
    done = 0
    while done < spec.trials:
        m = min(chunk, spec.trials - done)
        u = rng.random((m, spec.n))
        x = np.zeros((m, spec.n), dtype=np.int8)
        x[u < spec.p_neg] = -1
        x[u >= spec.p_neg + spec.p_zero] = 1
        absx = np.abs(x)
        n_t = np.cumsum(absx, axis=1, dtype=np.int64)
        s_t = np.cumsum(x - mu * absx, axis=1)
        alive = n_t > 0
        safe_n = np.where(alive, n_t, 1).astype(np.float64)
        boundary = np.sqrt(2.0 * safe_n * np.log(CONFIDENCE_C / spec.delta * np.sqrt(safe_n)))
        crossed = (np.abs(s_t) >= boundary) & alive
        crossings += int(crossed.any(axis=1).sum())
        done += m
    return crossings / spec.trials


def _concentration_mc_adapted(spec: ConcentrationTrialSpec, rng: np.random.Generator) -> float:
    crossings = 0
    log_c_delta = CONFIDENCE_C / spec.delta
    for _ in range(spec.trials):
        s = 0.0
        n_t = 0
        for t in range(1, spec.n + 1):
            p_neg, p_zero, p_pos = spec.adapt(t, s, n_t)
            u = rng.random()
            x = -1 if u < p_neg else (1 if u >= p_neg + p_zero else 0)
            if x:
                s += x - _conditional_mean(p_neg, p_pos)
                n_t += 1
                if abs(s) >= math.sqrt(2.0 * n_t * math.log(log_c_delta * math.sqrt(n_t))):
                    crossings += 1
                    break
    return crossings / spec.trials


def concentration_report(spec: ConcentrationTrialSpec, seed: int) -> dict:
    freq = concentration_mc(spec, np.random.default_rng(seed))
    return {
        "check": "concentration-boundary",
        "parameters": {
            "n": spec.n,
            "trials": spec.trials,
            "delta": spec.delta,
            "p_neg": spec.p_neg,
            "p_zero": spec.p_zero,
            "p_pos": spec.p_pos,
            "seed": seed,
        },
        "statistic": freq,
        "bound": spec.delta,
        "pass": freq <= spec.delta,
    }


# ---------------------------------------------------------------------------
# Conditional pairwise bias (frozen partition)


@dataclass(frozen=True)
class BiasEstimate:
    """Monte-Carlo estimate of E[C_i - C_j | C_i != C_j] with its precision."""

    mean: float
    stderr: float
    nonzero: int
    samples: int


def _validate_pair(partition: Partition, d: int, i: int, j: int) -> tuple[int, ...]:
    if not 1 <= d <= len(partition.blocks):
        raise ValueError(f"block {d} out of range 1..{len(partition.blocks)}")
    block = partition.blocks[d - 1]
    if i == j:
        raise ValueError("items must be distinct")
    if i not in block or j not in block:
        raise ValueError(f"items {i}, {j} must both sit in block {d} = {block}")
    return block


def pairwise_bias_estimate(
    model: ClickModelSpec,
    partition: Partition,
    d: int,
    i: int,
    j: int,
    samples: int,
    rng: np.random.Generator,
) -> BiasEstimate:
    """Estimate the conditional click bias of items i over j in block d.

    Each sample freshly randomizes the frozen partition's blocks (as the
    learner would) and draws one click vector; the estimate is the mean of
    C_i - C_j over the samples where they differ. Raises
    :class:`UndefinedEstimateError` when no sample produced a difference.
    """
    _validate_pair(partition, d, i, j)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if partition.L != model.L:
        raise ValueError("partition and model disagree on the number of items")
    total = 0
    nonzero = 0
    for _ in range(samples):
        a = sample_action(partition, model.K, rng)
        clicks = sample_clicks(model, a, rng)
        u = int(clicks[i - 1]) - int(clicks[j - 1])
        if u:
            total += u
            nonzero += 1
    if nonzero == 0:
        raise UndefinedEstimateError(
            f"no nonzero comparison among {samples} samples for items ({i}, {j})"
        )
    mean = total / nonzero
    stderr = math.sqrt((1.0 - mean * mean) / (nonzero - 1)) if nonzero > 1 else math.inf
    return BiasEstimate(mean=mean, stderr=stderr, nonzero=nonzero, samples=samples)


def _pair_joint(model: ClickModelSpec, a: Action, i: int, j: int) -> tuple[float, float]:
    """P(C_i=1, C_j=0) and P(C_i=0, C_j=1) for one fixed ranking."""
    vi = click_prob(model, a, a.position_of(i))
    vj = click_prob(model, a, a.position_of(j))
    if model.family is Family.CASCADE:
        # At most one click per cascade scan, so the events are disjoint.
        return vi, vj
    return vi * (1.0 - vj), vj * (1.0 - vi)


def pairwise_bias_exact(
    model: ClickModelSpec, partition: Partition, d: int, i: int, j: int
) -> float:
    """Exhaustive-enumeration oracle for :func:`pairwise_bias_estimate`.

    Averages the joint click distribution of (i, j) over every placement of
    block d's items into its slots. Placements of other blocks never move
    the answer: every family's click probability depends on the items above
    only through their unordered set. Blocks are capped at 7 items.
    """
    block = _validate_pair(partition, d, i, j)
    if len(block) > MAX_ENUM_ITEMS:
        raise CapacityError(f"exact enumeration caps block size at {MAX_ENUM_ITEMS}")
    if partition.L != model.L:
        raise ValueError("partition and model disagree on the number of items")
    base = [item for blk in partition.blocks for item in blk]
    offset = sum(len(partition.blocks[c]) for c in range(d - 1))
    num = 0.0
    den = 0.0
    for perm in itertools.permutations(block):
        slots = list(base)
        slots[offset : offset + len(block)] = perm
        a = Action(tuple(slots))
        p_plus, p_minus = _pair_joint(model, a, i, j)
        num += p_plus - p_minus
        den += p_plus + p_minus
    if den == 0.0:
        raise UndefinedEstimateError(
            f"items ({i}, {j}) can never produce different clicks in block {d}"
        )
    return num / den


def lemma1_report(
    model: ClickModelSpec,
    partition: Partition,
    d: int,
    i: int,
    j: int,
    samples: int,
    seed: int,
) -> dict:
    """Check the conditional-bias estimate against its closed-form floor.

    With alpha(i) >= alpha(j) the estimate must reach
    ``(alpha_i - alpha_j) / (alpha_i + alpha_j)`` up to three standard
    errors; with the roles flipped it must stay at or below zero. Either
    way it must agree with the exhaustive-enumeration oracle.
    """
    est = pairwise_bias_estimate(
        model, partition, d, i, j, samples, np.random.default_rng(seed)
    )
    exact = pairwise_bias_exact(model, partition, d, i, j)
    ai, aj = model.alpha[i - 1], model.alpha[j - 1]
    slack = 3.0 * est.stderr
    if ai >= aj:
        bound = (ai - aj) / (ai + aj) if ai + aj > 0 else 0.0
        bound_ok = est.mean >= bound - slack
    else:
        bound = 0.0
        bound_ok = est.mean <= bound + slack
    ok = bound_ok and abs(est.mean - exact) <= slack
    return {
        "check": "conditional-pairwise-bias",
        "parameters": {
            "model": model.family.value,
            "items": [i, j],
            "block": d,
            "samples": samples,
            "seed": seed,
        },
        "statistic": est.mean,
        "bound": bound,
        "pass": ok,
        "stderr": est.stderr,
        "nonzero": est.nonzero,
        "exact": exact,
    }


# ---------------------------------------------------------------------------
# Minimax lower-bound instances


@dataclass(frozen=True)
class LowerBoundInstance:
    """A hard document-based instance: K blocks of N items, one planted winner each.

    Item (k, i) gets id (k - 1) N + i; its weight is 1/2 + Delta when
    ``m[k] = i`` and 1/2 otherwise, with ``Delta = sqrt(N / (16 (n + K)))``.
    """

    N: int
    K: int
    n: int
    m: tuple[int, ...]
    Delta: float
    model: ClickModelSpec

    @property
    def L(self) -> int:
        return self.N * self.K


def make_lowerbound_instance(
    N: int,
    K: int,
    n: int,
    m: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> LowerBoundInstance:
    """Construct the hard instance; draw the planted winners if ``m`` is absent."""
    if N < 8:
        raise ValueError("N must be >= 8")
    if n < K or n < N:
        raise ValueError("need n >= K and n >= N")
    if K < 1:
        raise ValueError("K must be >= 1")
    if m is None:
        if rng is None:
            raise ValueError("provide m or a generator to draw it")
        m = tuple(int(x) for x in rng.integers(1, N + 1, size=K))
    else:
        m = tuple(int(x) for x in m)
        if len(m) != K or any(not 1 <= x <= N for x in m):
            raise ValueError(f"m must be {K} entries in 1..{N}")
    delta = math.sqrt(N / (16.0 * (n + K)))
    alpha = []
    for k in range(1, K + 1):
        for i in range(1, N + 1):
            alpha.append(0.5 + delta if m[k - 1] == i else 0.5)
    return LowerBoundInstance(
        N=N, K=K, n=n, m=m, Delta=delta, model=document_model(alpha, K)
    )


def theorem2_lower_bound(K: int, L: int, n: int) -> float:
    """Minimax floor sqrt(K L n) / (16 sqrt(2)) for the hard instances."""
    if K < 1 or L < 1 or n < 1:
        raise ValueError("K, L, n must be >= 1")
    return math.sqrt(K * L * n) / (16.0 * math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Run monitors (simulator privileges)


def first_wrong_edge(
    alpha: Sequence[float], events: Sequence[tuple[int, tuple[int, int]]]
) -> int | None:
    """First round at which an edge contradicting alpha was admitted.

    An admitted edge (loser, winner) is wrong when the loser is strictly
    more attractive; pairs of equal weight are exempt either way.
    """
    for t, (loser, winner) in events:
        if alpha[loser - 1] > alpha[winner - 1]:
            return t
    return None


class LeaderPositionViolation(AssertionError):
    """A block's most attractive item sat too deep despite a clean relation."""


class TopRankRunMonitor:
    """Watches one learner run: admitted edges and block-leader positions.

    While no wrong edge has been admitted, the best item of block d (by
    attraction rank) can sit no deeper than 1 + (items in earlier blocks);
    a clean relation that violates this indicates an implementation bug,
    so it raises. The positional check needs strictly decreasing ranks to
    be meaningful and disables itself when alpha has ties.
    """

    def __init__(self, alpha: Sequence[float], check_leaders: bool = True):
        self.alpha = tuple(float(a) for a in alpha)
        self.events: list[tuple[int, tuple[int, int]]] = []
        self.wrong_edge_round: int | None = None
        order = sorted(range(1, len(alpha) + 1), key=lambda i: (-self.alpha[i - 1], i))
        self._rank = {item: pos for pos, item in enumerate(order, start=1)}
        self._check_leaders = check_leaders and len(set(self.alpha)) == len(self.alpha)
        self._seen_partition = None

    def __call__(self, t: int, action, clicks, agent: TopRankAgent) -> None:
        for edge in agent.last_admitted:
            self.events.append((t, edge))
            if self.wrong_edge_round is None:
                loser, winner = edge
                if self.alpha[loser - 1] > self.alpha[winner - 1]:
                    self.wrong_edge_round = t
        if self._check_leaders and self.wrong_edge_round is None:
            partition = agent.state.partition
            if partition is not self._seen_partition:
                self._seen_partition = partition
                self._assert_leader_positions(t, partition)

    def _assert_leader_positions(self, t: int, partition: Partition) -> None:
        placed = 0
        for block in partition.blocks:
            leader = min(self._rank[i] for i in block)
            if leader > 1 + placed:
                raise LeaderPositionViolation(
                    f"round {t}: block leader rank {leader} exceeds 1 + {placed}"
                )
            placed += len(block)


def run_wrong_edge_trial(
    model: ClickModelSpec, n: int, delta: float, seed: int
) -> int | None:
    """Run the learner once; report the first wrong-edge round, if any."""
    agent = TopRankAgent(model.L, model.K, delta)
    monitor = TopRankRunMonitor(model.alpha)
    run_episode(model, agent, n, seed, on_round=monitor)
    return monitor.wrong_edge_round


def _wrong_edge_worker(payload: tuple) -> int | None:
    model, n, delta, seed = payload
    return run_wrong_edge_trial(model, n, delta, seed)


def wrong_edge_frequency(
    model: ClickModelSpec,
    n: int,
    delta: float,
    seeds: int,
    base_seed: int = 0,
    workers: int = 1,
) -> tuple[float, list[int | None]]:
    """Fraction of seeded runs that ever admit a wrong edge.

    The admission failure probability is claimed to stay below
    ``delta * L**2``. Trials run on independent streams and merge in seed
    order, so the result is independent of scheduling.
    """
    payloads = [(model, n, delta, base_seed + s) for s in range(seeds)]
    if workers > 1 and seeds > 1:
        with ProcessPoolExecutor(max_workers=min(workers, seeds)) as pool:
            rounds = list(pool.map(_wrong_edge_worker, payloads, chunksize=8))
    else:
        rounds = [_wrong_edge_worker(p) for p in payloads]
    fired = sum(r is not None for r in rounds)
    return fired / seeds, rounds
