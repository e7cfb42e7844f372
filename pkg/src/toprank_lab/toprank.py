"""TopRank: online ranking through an incrementally learned partial order.

The learner maintains a relation G of ordered item pairs ``(j, i)``, each
meaning the click evidence so far says item j is less attractive than item
i. Every round the items are partitioned by repeatedly peeling off the
minimal items of G, each block is shuffled uniformly into its own
contiguous slot range, and the per-pair statistics

    S[i][j] = sum of click differences C_i - C_j over rounds sharing a block
    N[i][j] = number of those rounds where the clicks differed

decide when a new pair enters G: ``(j, i)`` is admitted once
``S[i][j] >= sqrt(2 N ln((c / delta) sqrt(N)))`` with N > 0, where c is the
exact constant ``4 sqrt(2/pi) / erf(sqrt(2))``. G only ever grows. Should
it acquire a cycle, the minimal-item peel stalls; all remaining items are
then lumped into one final block and the event is counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Mapping

import numpy as np

from .env import (
    Action,
    ClickModelSpec,
    ClickVector,
    action_value,
    optimal_value,
    sample_clicks,
)

__all__ = [
    "CONFIDENCE_C",
    "RelationGraph",
    "Partition",
    "PairStats",
    "TopRankState",
    "compute_partition",
    "choose_action",
    "sample_action",
    "edge_threshold",
    "update",
    "step",
    "snapshot",
    "state_from_snapshot",
]

#: Exact confidence constant 4 sqrt(2/pi) / erf(sqrt(2)), about 3.3437.
CONFIDENCE_C = 4.0 * math.sqrt(2.0 / math.pi) / math.erf(math.sqrt(2.0))


@dataclass(frozen=True)
class RelationGraph:
    """A set of ordered edges ``(j, i)`` reading "j is worse than i"."""

    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        for j, i in self.edges:
            if j == i:
                raise ValueError(f"self-loop ({j}, {i}) is not a valid comparison")
            if j < 1 or i < 1:
                raise ValueError(f"edge ({j}, {i}) mentions a nonpositive item id")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "RelationGraph":
        return cls(frozenset((int(j), int(i)) for j, i in pairs))

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return pair in self.edges

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(sorted(self.edges))


@dataclass(frozen=True)
class Partition:
    """Ordered blocks of incomparable items and their contiguous slot ranges.

    ``blocks[d]`` holds the items of block d+1 in ascending order and
    occupies exactly the positions ``slots[d]``. ``cycle_fallback`` marks
    that the final block was formed by lumping the remainder after the
    minimal-item peel stalled on a cycle.
    """

    blocks: tuple[tuple[int, ...], ...]
    slots: tuple[tuple[int, ...], ...]
    cycle_fallback: bool = False

    @property
    def L(self) -> int:
        return sum(len(b) for b in self.blocks)

    @cached_property
    def block_of(self) -> np.ndarray:
        """0-based block index per item: ``block_of[i - 1]``."""
        out = np.empty(self.L, dtype=np.int64)
        for d, block in enumerate(self.blocks):
            for i in block:
                out[i - 1] = d
        out.setflags(write=False)
        return out


def compute_partition(graph: RelationGraph | Iterable[tuple[int, int]], L: int) -> Partition:
    """Partition items 1..L by iteratively peeling the minimal items of G.

    Block d is the set of items with no outgoing edge into the items not yet
    peeled. If at some stage no item is minimal (G has a cycle among the
    remainder), all remaining items become one final block and
    ``cycle_fallback`` is set.
    """
    if L < 1:
        raise ValueError("L must be positive")
    if not isinstance(graph, RelationGraph):
        graph = RelationGraph.from_pairs(graph)
    targets: dict[int, set[int]] = {}
    for j, i in graph.edges:
        if j > L or i > L:
            raise ValueError(f"edge ({j}, {i}) mentions an item beyond L={L}")
        targets.setdefault(j, set()).add(i)

    remaining = set(range(1, L + 1))
    blocks: list[tuple[int, ...]] = []
    cycle = False
    while remaining:
        minimal = {
            i for i in remaining if not (targets.get(i, ()) and targets[i] & remaining)
        }
        if not minimal:
            blocks.append(tuple(sorted(remaining)))
            cycle = True
            break
        blocks.append(tuple(sorted(minimal)))
        remaining -= minimal

    slot_ranges: list[tuple[int, ...]] = []
    start = 1
    for block in blocks:
        slot_ranges.append(tuple(range(start, start + len(block))))
        start += len(block)
    return Partition(blocks=tuple(blocks), slots=tuple(slot_ranges), cycle_fallback=cycle)


def _pair_start(a: int, L: int) -> int:
    # Flat offset of row a (0-based) in the upper-triangle pair layout.
    return a * (L - 1) - a * (a - 1) // 2


class PairStats:
    """Running pairwise click-comparison statistics.

    Only the upper triangle is stored: for each pair ``i < j``, ``s[p]``
    and ``n[p]`` hold S[i][j] and N[i][j] at flat offset ``p =
    index(i, j)``. The lower triangle is derived, ``S[j][i] = -S[i][j]``
    and ``N[j][i] = N[i][j]``.
    """

    __slots__ = ("L", "s", "n")

    def __init__(self, L: int):
        if L < 1:
            raise ValueError("L must be positive")
        self.L = L
        npairs = L * (L - 1) // 2
        self.s = np.zeros(npairs, dtype=np.int64)
        self.n = np.zeros(npairs, dtype=np.int64)

    def index(self, i: int, j: int) -> int:
        if not 1 <= i < j <= self.L:
            raise ValueError(f"need 1 <= i < j <= {self.L}, got ({i}, {j})")
        return _pair_start(i - 1, self.L) + (j - i - 1)

    def s_of(self, i: int, j: int) -> int:
        if i < j:
            return int(self.s[self.index(i, j)])
        return -int(self.s[self.index(j, i)])

    def n_of(self, i: int, j: int) -> int:
        if i < j:
            return int(self.n[self.index(i, j)])
        return int(self.n[self.index(j, i)])

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Full L x L (S, N): S antisymmetric, N symmetric, zero diagonals."""
        S = np.zeros((self.L, self.L), dtype=np.int64)
        N = np.zeros((self.L, self.L), dtype=np.int64)
        iu = np.triu_indices(self.L, k=1)
        S[iu] = self.s
        S -= S.T
        N[iu] = self.n
        N += N.T
        return S, N


def edge_threshold(N: int, delta: float, c: float = CONFIDENCE_C) -> float:
    """Admission boundary sqrt(2 N ln((c / delta) sqrt(N))), natural log.

    Defined only for N >= 1; with no nonzero comparisons the admission rule
    simply does not apply.
    """
    if N < 1:
        raise ValueError("edge_threshold requires N >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if c <= 0.0:
        raise ValueError("c must be positive")
    return math.sqrt(2.0 * N * math.log(c / delta * math.sqrt(N)))


@dataclass(frozen=True)
class _ActionLayout:
    """Per-partition plan for assembling one round's ranking."""

    template: np.ndarray  # deterministic fill: blocks in order, items ascending
    shuffled: tuple[tuple[int, np.ndarray], ...]  # (slot offset, items) to permute
    fixed_action: Action | None  # reusable action when nothing is shuffled


@lru_cache(maxsize=512)
def _layout(partition: Partition, K: int) -> _ActionLayout:
    template = np.fromiter(
        (i for block in partition.blocks for i in block), dtype=np.int64, count=partition.L
    )
    shuffled = []
    offset = 0
    for block in partition.blocks:
        # Blocks entirely beyond the display cutoff keep the ascending fill.
        if len(block) > 1 and offset < K:
            shuffled.append((offset, np.asarray(block, dtype=np.int64)))
        offset += len(block)
    template.setflags(write=False)
    fixed = Action(tuple(template.tolist())) if not shuffled else None
    return _ActionLayout(template, tuple(shuffled), fixed)


@lru_cache(maxsize=512)
def _same_block_pairs(partition: Partition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat stat offsets and 0-based item indices of all within-block pairs."""
    L = partition.L
    ps, is_, js = [], [], []
    for block in partition.blocks:
        for x in range(len(block)):
            for y in range(x + 1, len(block)):
                i, j = block[x], block[y]
                ps.append(_pair_start(i - 1, L) + (j - i - 1))
                is_.append(i - 1)
                js.append(j - 1)
    p = np.asarray(ps, dtype=np.int64)
    i0 = np.asarray(is_, dtype=np.int64)
    j0 = np.asarray(js, dtype=np.int64)
    for arr in (p, i0, j0):
        arr.setflags(write=False)
    return p, i0, j0


class TopRankState:
    """Mutable learner state: the relation, pair statistics, and counters.

    A state is owned by one logical thread at a time; independent states may
    run concurrently. ``delta`` is the admission confidence parameter
    (choose 1/n when the horizon n is known) and ``c`` defaults to the exact
    closed-form constant.
    """

    def __init__(self, L: int, K: int, delta: float, c: float | None = None):
        if not 1 <= K <= L:
            raise ValueError(f"K must satisfy 1 <= K <= L={L}")
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.L = L
        self.K = K
        self.delta = delta
        self.c = CONFIDENCE_C if c is None else float(c)
        self.t = 0
        self.cycle_events = 0
        self.stats = PairStats(L)
        self._edges: set[tuple[int, int]] = set()
        npairs = L * (L - 1) // 2
        # Admission flags per stored pair (i < j): "lo" means (j, i) is in G
        # (the lower id won), "hi" means (i, j) is in G.
        self._win_lo = np.zeros(npairs, dtype=bool)
        self._win_hi = np.zeros(npairs, dtype=bool)
        # 1-based items of each stored pair, for mapping flags back to edges.
        self._pair_i = np.repeat(np.arange(1, L + 1), [L - x for x in range(1, L + 1)])
        self._pair_j = np.concatenate([np.arange(i + 1, L + 1) for i in range(1, L + 1)]) if L > 1 else np.empty(0, np.int64)
        self._partition: Partition | None = None

    @property
    def relation(self) -> RelationGraph:
        return RelationGraph(frozenset(self._edges))

    @property
    def partition(self) -> Partition:
        """Current block partition; cached until new edges are admitted."""
        if self._partition is None:
            part = compute_partition(self.relation, self.L)
            if part.cycle_fallback:
                self.cycle_events += 1
            self._partition = part
        return self._partition

    def _admit(self) -> list[tuple[int, int]]:
        s, n = self.stats.s, self.stats.n
        active = np.nonzero(n)[0]
        if active.size == 0:
            return []
        counts = n[active].astype(np.float64)
        thr = np.sqrt(2.0 * counts * np.log((self.c / self.delta) * np.sqrt(counts)))
        sa = s[active]
        new: list[tuple[int, int]] = []
        for p in active[(sa >= thr) & ~self._win_lo[active]]:
            self._win_lo[p] = True
            new.append((int(self._pair_j[p]), int(self._pair_i[p])))
        for p in active[(-sa >= thr) & ~self._win_hi[active]]:
            self._win_hi[p] = True
            new.append((int(self._pair_i[p]), int(self._pair_j[p])))
        return sorted(new)


def choose_action(state: TopRankState, partition: Partition, rng: np.random.Generator) -> Action:
    """Draw the round's ranking uniformly from the partition's action set."""
    return sample_action(partition, state.K, rng)


def sample_action(partition: Partition, K: int, rng: np.random.Generator) -> Action:
    """Place each block in its slot range; shuffle blocks that reach the top K.

    Within every block whose slot range intersects positions 1..K the items
    are assigned by an independent uniform permutation. Blocks entirely
    beyond position K are filled in ascending item order: nothing there is
    ever clicked, so their internal order is immaterial.
    """
    layout = _layout(partition, K)
    if layout.fixed_action is not None:
        return layout.fixed_action
    slots = layout.template.copy()
    for offset, items in layout.shuffled:
        slots[offset : offset + items.size] = rng.permutation(items)
    return Action(tuple(slots.tolist()))


def update(
    state: TopRankState,
    partition: Partition,
    a: Action,
    clicks: ClickVector,
) -> list[tuple[int, int]]:
    """Fold one round of clicks into the statistics and admit new edges.

    Every ordered pair sharing a block contributes its click difference to S
    and its absolute difference to N; cross-block pairs are untouched, and
    the ranking itself does not enter the statistics. After the statistics
    are updated, every pair with N > 0 whose S reaches the admission
    boundary contributes an edge. Returns the newly admitted ``(j, i)``
    edges, sorted; the round counter always advances.
    """
    if clicks.shape != (state.L,):
        raise ValueError(f"clicks must have shape ({state.L},)")
    state.t += 1
    p_idx, i0, j0 = _same_block_pairs(partition)
    if p_idx.size == 0:
        return []
    u = clicks[i0].astype(np.int64) - clicks[j0]
    if not np.any(u):
        # Statistics unchanged, so no pair can newly cross its boundary.
        return []
    state.stats.s[p_idx] += u
    state.stats.n[p_idx] += np.abs(u)
    new_edges = state._admit()
    if new_edges:
        state._edges.update(new_edges)
        state._partition = None
    return new_edges


def step(
    state: TopRankState, model: ClickModelSpec, rng: np.random.Generator
) -> tuple[Action, ClickVector, float]:
    """One full round against a simulated user: rank, observe, learn.

    Returns the ranking, the sampled clicks, and the round's expected regret
    (the sorted ranking's value minus the chosen ranking's value). One
    generator drives both the block shuffles and the click draws.
    """
    if (model.L, model.K) != (state.L, state.K):
        raise ValueError(
            f"state is for L={state.L}, K={state.K} but model has L={model.L}, K={model.K}"
        )
    partition = state.partition
    a = choose_action(state, partition, rng)
    clicks = sample_clicks(model, a, rng)
    update(state, partition, a, clicks)
    regret = optimal_value(model) - action_value(model, a)
    return a, clicks, regret


def snapshot(state: TopRankState) -> dict:
    """JSON-ready snapshot: edges, upper-triangle S/N, round, cycle count."""
    return {
        "L": state.L,
        "K": state.K,
        "delta": state.delta,
        "round": state.t,
        "cycle_events": state.cycle_events,
        "edges": [list(e) for e in sorted(state._edges)],
        "S_upper": state.stats.s.tolist(),
        "N_upper": state.stats.n.tolist(),
    }


def state_from_snapshot(data: Mapping) -> TopRankState:
    """Rebuild a state from :func:`snapshot` output."""
    state = TopRankState(int(data["L"]), int(data["K"]), float(data["delta"]))
    state.t = int(data["round"])
    state.cycle_events = int(data["cycle_events"])
    npairs = state.L * (state.L - 1) // 2
    s = np.asarray(data["S_upper"], dtype=np.int64)
    n = np.asarray(data["N_upper"], dtype=np.int64)
    if s.shape != (npairs,) or n.shape != (npairs,):
        raise ValueError(f"S/N upper triangles must have {npairs} entries")
    if np.any(n < 0) or np.any(np.abs(s) > n) or np.any(n > state.t):
        raise ValueError("inconsistent pair statistics in snapshot")
    state.stats.s[:] = s
    state.stats.n[:] = n
    for j, i in data["edges"]:
        j, i = int(j), int(i)
        if not (1 <= j <= state.L and 1 <= i <= state.L) or j == i:
            raise ValueError(f"snapshot edge ({j}, {i}) is invalid for L={state.L}")
        state._edges.add((j, i))
        lo, hi = min(i, j), max(i, j)
        p = state.stats.index(lo, hi)
        if i == lo:
            state._win_lo[p] = True
        else:
            state._win_hi[p] = True
    return state
