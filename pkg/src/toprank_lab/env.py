"""Stochastic click models over ranked lists.

Four families share one interface: document-based (``dbm``), position-based
(``pbm``), cascade, and a generic factored family whose examination
probability depends on the position and the unordered set of items placed
above it. Every family exposes exact per-position click probabilities,
click sampling, and an exhaustive checker for the four structural
assumptions the ranking algorithm relies on:

  A1  positions beyond the display cutoff K are never clicked;
  A2  ranking items by weakly decreasing attraction maximizes the expected
      number of clicks in the top K;
  A3  swapping a more attractive item downward cannot raise the click
      probability at its old position by more than the attraction ratio;
  A4  among rankings that place an equally attractive item at position k,
      the sorted ranking has the smallest click probability there.

Indexing convention, used across the whole package: items and positions are
1-based in every public interface, file format, and report. Numpy arrays
are stored 0-based, so ``arr[x - 1]`` belongs to item (or position) ``x``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "MAX_ENUM_ITEMS",
    "CapacityError",
    "Family",
    "Action",
    "ClickModelSpec",
    "ClickVector",
    "Counterexample",
    "AssumptionReport",
    "document_model",
    "position_model",
    "cascade_model",
    "factored_model",
    "cascade_as_factored",
    "click_prob",
    "action_value",
    "sample_clicks",
    "optimal_action",
    "optimal_value",
    "brute_force_optimal_value",
    "check_assumptions",
    "model_to_dict",
    "model_from_dict",
    "load_model_spec",
    "save_model_spec",
]

# Exhaustive checks enumerate all L! rankings; 7! = 5040 stays cheap.
MAX_ENUM_ITEMS = 7

#: A click vector is a 0/1 int8 array of length L indexed by item identity:
#: ``clicks[i - 1]`` is item i's indicator, regardless of where it was shown.
ClickVector = np.ndarray


class CapacityError(ValueError):
    """An exhaustive check was asked to enumerate too many rankings."""


class Family(str, Enum):
    DOCUMENT_BASED = "dbm"
    POSITION_BASED = "pbm"
    CASCADE = "cascade"
    FACTORED = "factored"


@dataclass(frozen=True)
class Action:
    """A ranking of all L items: ``slots[k - 1]`` is the item at position k."""

    slots: tuple[int, ...]

    def __post_init__(self) -> None:
        L = len(self.slots)
        if L < 1 or sorted(self.slots) != list(range(1, L + 1)):
            raise ValueError(f"slots must be a permutation of 1..{L}: {self.slots!r}")

    @property
    def L(self) -> int:
        return len(self.slots)

    def item_at(self, k: int) -> int:
        if not 1 <= k <= len(self.slots):
            raise ValueError(f"position {k} out of range 1..{len(self.slots)}")
        return self.slots[k - 1]

    def position_of(self, item: int) -> int:
        try:
            return self.slots.index(item) + 1
        except ValueError:
            raise ValueError(f"unknown item {item}") from None

    @cached_property
    def slot_arr(self) -> np.ndarray:
        arr = np.asarray(self.slots, dtype=np.int64)
        arr.setflags(write=False)
        return arr


def identity_action(L: int) -> Action:
    return Action(tuple(range(1, L + 1)))


@dataclass(frozen=True)
class ClickModelSpec:
    """Immutable description of a click model.

    ``alpha`` holds the per-item attraction weights in [0, 1]; ``K`` is the
    number of displayed positions (click probabilities vanish beyond it).
    ``chi`` is the per-position examination vector of the position-based
    family (length K). ``chi_table`` is the factored family's examination
    table mapping ``(unordered set of items placed above, position)`` to an
    examination probability in [0, 1]; it is canonicalized to a sorted tuple
    of ``(prefix, position, value)`` entries so specs stay hashable. For the
    factored family ``alpha`` plays the role of the item attraction factor;
    the effective attractiveness is proportional to it because the
    first-position examination is a shared constant.

    Instances are immutable and safe to share across concurrent episodes;
    all sampling uses a caller-supplied random generator.
    """

    family: Family
    alpha: tuple[float, ...]
    K: int
    chi: tuple[float, ...] | None = None
    chi_table: tuple[tuple[tuple[int, ...], int, float], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        L = len(self.alpha)
        if L < 1:
            raise ValueError("alpha must contain at least one item")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha):
            raise ValueError("alpha entries must lie in [0, 1]")
        if not 1 <= self.K <= L:
            raise ValueError(f"K must satisfy 1 <= K <= L={L}, got {self.K}")

        if self.family is Family.POSITION_BASED:
            if self.chi is None:
                raise ValueError("position-based models require chi")
            chi = tuple(float(x) for x in self.chi)
            if len(chi) != self.K:
                raise ValueError(f"chi must have length K={self.K}, got {len(chi)}")
            if any(not 0.0 <= x <= 1.0 for x in chi):
                raise ValueError("chi entries must lie in [0, 1]")
            object.__setattr__(self, "chi", chi)
        elif self.chi is not None:
            raise ValueError("chi is only meaningful for the position-based family")

        if self.family is Family.FACTORED:
            if L > MAX_ENUM_ITEMS:
                raise CapacityError(
                    f"factored tables are only supported up to L={MAX_ENUM_ITEMS}"
                )
            if self.chi_table is None:
                raise ValueError("factored models require chi_table")
            object.__setattr__(self, "chi_table", self._canonical_table(L))
        elif self.chi_table is not None:
            raise ValueError("chi_table is only meaningful for the factored family")

    def _canonical_table(self, L: int) -> tuple[tuple[tuple[int, ...], int, float], ...]:
        raw: dict[tuple[tuple[int, ...], int], float] = {}
        if isinstance(self.chi_table, Mapping):
            entries = (
                (prefix, k, v) for (prefix, k), v in self.chi_table.items()
            )
        else:
            entries = iter(self.chi_table)
        for prefix, k, v in entries:
            key = (tuple(sorted(int(i) for i in prefix)), int(k))
            raw[key] = float(v)
        for (prefix, k), v in raw.items():
            if not 1 <= k <= self.K:
                raise ValueError(f"chi_table position {k} outside 1..K={self.K}")
            if len(prefix) != k - 1 or len(set(prefix)) != len(prefix):
                raise ValueError(
                    f"chi_table prefix {prefix} must be {k - 1} distinct items"
                )
            if any(not 1 <= i <= L for i in prefix):
                raise ValueError(f"chi_table prefix {prefix} mentions unknown items")
            if not 0.0 <= v <= 1.0:
                raise ValueError("chi_table values must lie in [0, 1]")
        for k in range(1, self.K + 1):
            for prefix in itertools.combinations(range(1, L + 1), k - 1):
                if (prefix, k) not in raw:
                    raise ValueError(
                        f"chi_table is missing prefix {prefix} at position {k}"
                    )
        return tuple(sorted((p, k, v) for (p, k), v in raw.items()))

    @property
    def L(self) -> int:
        return len(self.alpha)

    @cached_property
    def alpha_arr(self) -> np.ndarray:
        arr = np.asarray(self.alpha, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def chi_arr(self) -> np.ndarray | None:
        if self.chi is None:
            return None
        arr = np.asarray(self.chi, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def _chi_lookup(self) -> dict[tuple[tuple[int, ...], int], float]:
        assert self.chi_table is not None
        return {(prefix, k): v for prefix, k, v in self.chi_table}

    def examination(self, prefix: Iterable[int], k: int) -> float:
        """Factored examination probability for ``prefix`` placed above position k."""
        return self._chi_lookup[(tuple(sorted(prefix)), k)]


def document_model(alpha: Sequence[float], K: int) -> ClickModelSpec:
    return ClickModelSpec(Family.DOCUMENT_BASED, tuple(alpha), K)


def position_model(alpha: Sequence[float], K: int, chi: Sequence[float]) -> ClickModelSpec:
    return ClickModelSpec(Family.POSITION_BASED, tuple(alpha), K, chi=tuple(chi))


def cascade_model(alpha: Sequence[float], K: int) -> ClickModelSpec:
    return ClickModelSpec(Family.CASCADE, tuple(alpha), K)


def factored_model(alpha: Sequence[float], K: int, chi_table) -> ClickModelSpec:
    return ClickModelSpec(Family.FACTORED, tuple(alpha), K, chi_table=chi_table)


def cascade_as_factored(alpha: Sequence[float], K: int) -> ClickModelSpec:
    """Factored-table encoding of the cascade model (same click probabilities).

    The examination of position k given the unordered set of items above it
    is the probability none of them was clicked, which only depends on the
    set. This makes the subsumption of the cascade family by the factored
    family directly executable.
    """
    alpha = tuple(float(a) for a in alpha)
    L = len(alpha)
    table = {}
    for k in range(1, K + 1):
        for prefix in itertools.combinations(range(1, L + 1), k - 1):
            exam = 1.0
            for i in prefix:
                exam *= 1.0 - alpha[i - 1]
            table[(prefix, k)] = exam
    return factored_model(alpha, K, table)


def _check_dims(model: ClickModelSpec, a: Action) -> None:
    if a.L != model.L:
        raise ValueError(
            f"action has {a.L} items but the model has {model.L}"
        )


def click_prob(model: ClickModelSpec, a: Action, k: int) -> float:
    """Exact probability that position k of ranking ``a`` receives a click."""
    _check_dims(model, a)
    if not 1 <= k <= model.L:
        raise ValueError(f"position {k} out of range 1..{model.L}")
    if k > model.K:
        return 0.0
    item = a.slots[k - 1]
    fam = model.family
    if fam is Family.DOCUMENT_BASED:
        return model.alpha[item - 1]
    if fam is Family.POSITION_BASED:
        return model.alpha[item - 1] * model.chi[k - 1]
    if fam is Family.CASCADE:
        p = model.alpha[item - 1]
        for l in range(k - 1):
            p *= 1.0 - model.alpha[a.slots[l] - 1]
        return p
    return model.alpha[item - 1] * model.examination(a.slots[: k - 1], k)


def action_value(model: ClickModelSpec, a: Action) -> float:
    """Expected number of clicks on ``a``: the click probabilities of the K shown positions summed."""
    _check_dims(model, a)
    K = model.K
    shown = a.slot_arr[:K] - 1
    av = model.alpha_arr[shown]
    fam = model.family
    if fam is Family.DOCUMENT_BASED:
        return float(av.sum())
    if fam is Family.POSITION_BASED:
        return float((av * model.chi_arr).sum())
    if fam is Family.CASCADE:
        exam = np.empty(K)
        exam[0] = 1.0
        if K > 1:
            np.cumprod(1.0 - av[:-1], out=exam[1:])
        return float((av * exam).sum())
    return sum(click_prob(model, a, k) for k in range(1, K + 1))


def sample_clicks(model: ClickModelSpec, a: Action, rng: np.random.Generator) -> ClickVector:
    """Draw one click vector for ranking ``a``.

    The marginal of each position matches :func:`click_prob`. Document-based,
    position-based and factored positions are conditionally independent given
    the ranking; cascade clicks come from one top-down scan that stops at the
    first attractive item, so a cascade sample has at most one nonzero entry.
    Positions beyond K never receive clicks.
    """
    _check_dims(model, a)
    L, K = model.L, model.K
    clicks = np.zeros(L, dtype=np.int8)
    fam = model.family
    if fam is Family.CASCADE:
        alpha = model.alpha_arr
        slots = a.slots
        for k in range(K):
            idx = slots[k] - 1
            if rng.random() < alpha[idx]:
                clicks[idx] = 1
                break
        return clicks
    shown = a.slot_arr[:K] - 1
    if fam is Family.DOCUMENT_BASED:
        probs = model.alpha_arr[shown]
    elif fam is Family.POSITION_BASED:
        probs = model.alpha_arr[shown] * model.chi_arr
    else:
        probs = np.array(
            [click_prob(model, a, k) for k in range(1, K + 1)]
        )
    clicks[shown] = rng.random(K) < probs
    return clicks


def optimal_action(model: ClickModelSpec) -> Action:
    """Ranking by weakly decreasing attraction weight, ties by ascending id."""
    order = sorted(range(1, model.L + 1), key=lambda i: (-model.alpha[i - 1], i))
    return Action(tuple(order))


@lru_cache(maxsize=512)
def optimal_value(model: ClickModelSpec) -> float:
    """Expected clicks of the attraction-sorted ranking (the A2 maximizer)."""
    return action_value(model, optimal_action(model))


def brute_force_optimal_value(model: ClickModelSpec) -> float:
    """Maximum expected clicks over all L! rankings; independent of sorting."""
    if model.L > MAX_ENUM_ITEMS:
        raise CapacityError(
            f"brute force enumerates L! rankings and requires L <= {MAX_ENUM_ITEMS}"
        )
    return max(
        action_value(model, Action(perm))
        for perm in itertools.permutations(range(1, model.L + 1))
    )


@dataclass(frozen=True)
class Counterexample:
    """One measured violation of an assumption: ``lhs >= rhs - tol`` failed.

    For A3 the recorded sides are the cross-multiplied quantities
    ``alpha(j) * v(a, pos)`` and ``alpha(i) * v(swapped a, pos)`` so that
    zero-weight items never force a division.
    """

    assumption: str
    action: tuple[int, ...]
    position: int | None
    items: tuple[int, int] | None
    lhs: float
    rhs: float


@dataclass
class AssumptionReport:
    """Outcome of the exhaustive assumption check at one tolerance."""

    tol: float
    counterexamples: dict[str, list[Counterexample]]

    ASSUMPTIONS = ("A1", "A2", "A3", "A4")

    def assumption_passed(self, name: str) -> bool:
        return not self.counterexamples[name]

    @property
    def passed(self) -> bool:
        return all(self.assumption_passed(a) for a in self.ASSUMPTIONS)

    def to_dict(self) -> dict:
        out: dict = {"pass": self.passed, "tol": self.tol, "assumptions": {}}
        for name in self.ASSUMPTIONS:
            ces = self.counterexamples[name]
            out["assumptions"][name] = {
                "pass": not ces,
                "violations": len(ces),
                "examples": [
                    {
                        "action": list(ce.action),
                        "position": ce.position,
                        "items": list(ce.items) if ce.items else None,
                        "lhs": ce.lhs,
                        "rhs": ce.rhs,
                    }
                    for ce in ces[:5]
                ],
            }
        return out


def check_assumptions(model: ClickModelSpec, tol: float = 1e-12) -> AssumptionReport:
    """Verify assumptions A1-A4 by enumerating every action (L <= 7).

    A2 compares the attraction-sorted ranking against the brute-force
    maximum. A3 is checked for every ordered pair with ``alpha(i) >=
    alpha(j)`` in cross-multiplied form. A4 compares only rankings that
    place an equally attractive item at the inspected position, per its
    statement. Violations are recorded, never raised: flagging a model
    outside the assumption class is the checker's job.
    """
    L = model.L
    if L > MAX_ENUM_ITEMS:
        raise CapacityError(
            f"assumption check enumerates L! actions and requires L <= {MAX_ENUM_ITEMS}"
        )
    if not 0 <= tol:
        raise ValueError("tol must be nonnegative")

    alpha = model.alpha
    perms = list(itertools.permutations(range(1, L + 1)))
    values: dict[tuple[int, ...], list[float]] = {}
    for perm in perms:
        a = Action(perm)
        values[perm] = [click_prob(model, a, k) for k in range(1, L + 1)]

    ces: dict[str, list[Counterexample]] = {name: [] for name in AssumptionReport.ASSUMPTIONS}

    # A1: nothing beyond position K is ever clicked.
    for perm in perms:
        for k in range(model.K + 1, L + 1):
            v = values[perm][k - 1]
            if v > tol:
                ces["A1"].append(Counterexample("A1", perm, k, None, 0.0, v))

    # A2: the sorted ranking attains the maximum top-K value.
    a_star = optimal_action(model)
    star_value = sum(values[a_star.slots][: model.K])
    for perm in perms:
        val = sum(values[perm][: model.K])
        if star_value < val - tol:
            ces["A2"].append(Counterexample("A2", perm, None, None, star_value, val))

    # A3: demoting the more attractive item of a pair scales the click
    # probability at its old position down by at least alpha(i)/alpha(j).
    pairs = [
        (i, j)
        for i in range(1, L + 1)
        for j in range(1, L + 1)
        if i != j and alpha[i - 1] >= alpha[j - 1]
    ]
    for perm in perms:
        inverse = {item: pos for pos, item in enumerate(perm, start=1)}
        for i, j in pairs:
            pos = inverse[i]
            swapped = list(perm)
            swapped[pos - 1], swapped[inverse[j] - 1] = j, i
            lhs = alpha[j - 1] * values[perm][pos - 1]
            rhs = alpha[i - 1] * values[tuple(swapped)][pos - 1]
            if lhs < rhs - tol:
                ces["A3"].append(Counterexample("A3", perm, pos, (i, j), lhs, rhs))

    # A4: with an equally attractive item at position k, the sorted ranking
    # is the one least likely to be clicked there.
    star_alpha = [alpha[item - 1] for item in a_star.slots]
    for perm in perms:
        for k in range(1, model.K + 1):
            if alpha[perm[k - 1] - 1] != star_alpha[k - 1]:
                continue
            lhs = values[perm][k - 1]
            rhs = values[a_star.slots][k - 1]
            if lhs < rhs - tol:
                ces["A4"].append(Counterexample("A4", perm, k, None, lhs, rhs))

    return AssumptionReport(tol=tol, counterexamples=ces)


_FILE_FAMILIES = (Family.CASCADE, Family.POSITION_BASED, Family.DOCUMENT_BASED)


def model_to_dict(model: ClickModelSpec) -> dict:
    """Serializable form: {"family", "alpha", "K"} plus "chi" for pbm."""
    if model.family not in _FILE_FAMILIES:
        raise ValueError("only cascade, pbm and dbm models are file-representable")
    out: dict = {"family": model.family.value, "alpha": list(model.alpha), "K": model.K}
    if model.family is Family.POSITION_BASED:
        out["chi"] = list(model.chi)
    return out


def model_from_dict(d: Mapping) -> ClickModelSpec:
    try:
        family = Family(d["family"])
    except (KeyError, ValueError):
        raise ValueError(f"unknown model family in {d!r}") from None
    if family not in _FILE_FAMILIES:
        raise ValueError("only cascade, pbm and dbm models are file-representable")
    chi = d.get("chi")
    return ClickModelSpec(
        family,
        tuple(d["alpha"]),
        int(d["K"]),
        chi=tuple(chi) if chi is not None else None,
    )


def load_model_spec(path: str | Path) -> ClickModelSpec:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def save_model_spec(model: ClickModelSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
