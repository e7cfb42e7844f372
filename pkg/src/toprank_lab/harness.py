"""Episode runner, replicate aggregation, and CSV/JSON persistence.

Regret traces log the expected (not realized) per-round regret, computed
from the model's exact click probabilities, so curves carry no click noise;
realized click counts are kept alongside for diagnostics. Everything is
deterministic given the configuration: run r of a batch uses seed
``base_seed + r``, and each episode seed feeds two independent substreams,
the environment's click draws first and the agent's randomness second, so
agents with different internal randomness see identical click streams when
they produce identical rankings.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import AGENT_IDS, Agent, make_agent
from .env import ClickModelSpec, action_value, optimal_value, sample_clicks

__all__ = [
    "ExperimentConfig",
    "RegretTrace",
    "AggregateTrace",
    "run_episode",
    "run_batch",
    "write_trace",
    "read_trace_csv",
    "EPISODE_HEADER",
    "AGGREGATE_HEADER",
]

EPISODE_HEADER = "round,regret_instant,regret_cum"
AGGREGATE_HEADER = "round,mean_cum_regret,stderr_cum_regret,runs"
CLICKS_HEADER = "round,clicks_cum"

WORKERS_ENV_VAR = "TOPRANK_THREADS"


def default_stride(n: int) -> int:
    """Largest stride <= n/100 that divides n evenly (at least 1)."""
    s = max(1, n // 100)
    while n % s:
        s -= 1
    return s


def resolve_workers(requested: int | None) -> int:
    """Worker count: explicit request, else TOPRANK_THREADS (0 = auto), else 1."""
    if requested is None:
        raw = os.environ.get(WORKERS_ENV_VAR)
        if raw is None:
            return 1
        requested = int(raw)
    if requested < 0:
        raise ValueError("worker count must be >= 0")
    return requested if requested > 0 else (os.cpu_count() or 1)


def model_label(model: ClickModelSpec) -> str:
    return f"{model.family.value}-L{model.L}-K{model.K}"


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch: a model, an agent, a horizon, and seeded replicates."""

    model: ClickModelSpec
    agent: str
    n: int
    runs: int = 1
    base_seed: int = 0
    delta: float | None = None  # admission confidence; None means 1/n
    output_dir: Path | None = None
    stride: int | None = None  # logging stride; None picks ~100 checkpoints
    workers: int | None = None  # None defers to TOPRANK_THREADS

    def __post_init__(self) -> None:
        if self.agent not in AGENT_IDS:
            raise ValueError(f"unknown agent {self.agent!r}; choose one of {AGENT_IDS}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.stride is not None and (self.stride < 1 or self.n % self.stride):
            raise ValueError(f"stride must divide n={self.n} evenly")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))

    @property
    def resolved_delta(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.n

    @property
    def resolved_stride(self) -> int:
        return self.stride if self.stride is not None else default_stride(self.n)

    def to_dict(self) -> dict:
        from .env import model_to_dict

        return {
            "model": model_to_dict(self.model),
            "agent": self.agent,
            "n": self.n,
            "runs": self.runs,
            "base_seed": self.base_seed,
            "delta": self.resolved_delta,
            "stride": self.resolved_stride,
            "output_dir": str(self.output_dir) if self.output_dir else None,
        }


@dataclass
class RegretTrace:
    """One episode's regret trajectory.

    ``instant`` holds every round's expected instantaneous regret;
    ``clicks`` the realized click count per round. Logged views subsample at
    the stride: rounds stride, 2*stride, ..., n.
    """

    seed: int
    agent_id: str
    model_id: str
    stride: int
    instant: np.ndarray
    clicks: np.ndarray

    @property
    def n(self) -> int:
        return len(self.instant)

    @cached_property
    def cum(self) -> np.ndarray:
        return np.cumsum(self.instant)

    @property
    def logged_rounds(self) -> np.ndarray:
        return np.arange(self.stride, self.n + 1, self.stride)

    def logged_instant(self) -> np.ndarray:
        return self.instant[self.logged_rounds - 1]

    def logged_cum(self) -> np.ndarray:
        return self.cum[self.logged_rounds - 1]

    def logged_clicks_cum(self) -> np.ndarray:
        return np.cumsum(self.clicks)[self.logged_rounds - 1]

    @property
    def final_cum(self) -> float:
        return float(self.cum[-1]) if self.n else 0.0


@dataclass
class AggregateTrace:
    """Replicate mean and standard error of cumulative regret per logged round."""

    rounds: np.ndarray
    mean_cum: np.ndarray
    stderr_cum: np.ndarray
    runs: int

    @classmethod
    def from_traces(cls, traces: list[RegretTrace]) -> "AggregateTrace":
        if not traces:
            raise ValueError("need at least one trace")
        rounds = traces[0].logged_rounds
        for tr in traces[1:]:
            if not np.array_equal(tr.logged_rounds, rounds):
                raise ValueError("traces disagree on logged rounds")
        cum = np.stack([tr.logged_cum() for tr in traces])
        mean = cum.mean(axis=0)
        if len(traces) > 1:
            stderr = cum.std(axis=0, ddof=1) / np.sqrt(len(traces))
        else:
            stderr = np.zeros_like(mean)
        return cls(rounds=rounds, mean_cum=mean, stderr_cum=stderr, runs=len(traces))

    @property
    def final_mean(self) -> float:
        return float(self.mean_cum[-1]) if len(self.mean_cum) else 0.0

    @property
    def final_stderr(self) -> float:
        return float(self.stderr_cum[-1]) if len(self.stderr_cum) else 0.0


def run_episode(
    model: ClickModelSpec,
    agent: Agent,
    n: int,
    seed: int,
    stride: int = 1,
    on_round: Callable | None = None,
) -> RegretTrace:
    """Run one agent/environment episode of n rounds, deterministic in ``seed``.

    ``on_round(t, action, clicks, agent)`` is invoked after each round's
    observe, for monitors with simulator privileges.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if stride < 1 or n % stride:
        raise ValueError(f"stride must divide n={n} evenly")
    if agent.L != model.L:
        raise ValueError(f"agent is built for L={agent.L} but the model has L={model.L}")
    agent_k = getattr(agent, "K", model.K)
    if agent_k != model.K:
        raise ValueError(f"agent is built for K={agent_k} but the model has K={model.K}")

    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_ss)
    agent.reset(np.random.default_rng(agent_ss))

    opt = optimal_value(model)
    instant = np.empty(n, dtype=np.float64)
    clicks_per_round = np.empty(n, dtype=np.int64)
    last_action = None
    last_value = 0.0
    for t in range(1, n + 1):
        a = agent.act(t)
        c = sample_clicks(model, a, env_rng)
        agent.observe(a, c)
        if a is not last_action:
            last_action = a
            last_value = action_value(model, a)
        instant[t - 1] = opt - last_value
        clicks_per_round[t - 1] = int(c.sum())
        if on_round is not None:
            on_round(t, a, c, agent)
    return RegretTrace(
        seed=seed,
        agent_id=agent.name,
        model_id=model_label(model),
        stride=stride,
        instant=instant,
        clicks=clicks_per_round,
    )


def _episode_worker(payload: tuple) -> RegretTrace:
    model, agent_id, n, delta, stride, seed = payload
    agent = make_agent(agent_id, model, delta)
    return run_episode(model, agent, n, seed, stride=stride)


def run_batch(config: ExperimentConfig) -> AggregateTrace:
    """Run the configured replicates and aggregate them in run-index order.

    Replicates may execute in parallel worker processes; results are
    collected and files are written in run order either way, so outputs are
    byte-identical regardless of scheduling. When ``output_dir`` is set the
    per-episode traces, click diagnostics, the aggregate, and a config echo
    are written there.
    """
    stride = config.resolved_stride
    delta = config.resolved_delta
    payloads = [
        (config.model, config.agent, config.n, delta, stride, config.base_seed + r)
        for r in range(config.runs)
    ]
    workers = resolve_workers(config.workers)
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.runs)) as pool:
            traces = list(pool.map(_episode_worker, payloads))
    else:
        traces = [_episode_worker(p) for p in payloads]

    aggregate = AggregateTrace.from_traces(traces)
    if config.output_dir is not None:
        _write_batch_outputs(config, traces, aggregate)
    return aggregate


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips exactly.
    return repr(float(x))


def write_trace(trace: RegretTrace | AggregateTrace, path: str | Path) -> None:
    """Write a per-episode or aggregate trace as CSV with a fixed header."""
    lines: list[str] = []
    if isinstance(trace, RegretTrace):
        lines.append(EPISODE_HEADER)
        rounds = trace.logged_rounds
        inst = trace.logged_instant()
        cum = trace.logged_cum()
        for r, ri, rc in zip(rounds, inst, cum):
            lines.append(f"{r},{_fmt(ri)},{_fmt(rc)}")
    elif isinstance(trace, AggregateTrace):
        lines.append(AGGREGATE_HEADER)
        for r, m, s in zip(trace.rounds, trace.mean_cum, trace.stderr_cum):
            lines.append(f"{r},{_fmt(m)},{_fmt(s)},{trace.runs}")
    else:
        raise TypeError(f"cannot write a {type(trace).__name__} as a trace")
    _write_text(path, "\n".join(lines) + "\n")


def _write_clicks(trace: RegretTrace, path: Path) -> None:
    lines = [CLICKS_HEADER]
    for r, c in zip(trace.logged_rounds, trace.logged_clicks_cum()):
        lines.append(f"{r},{c}")
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path: str | Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _write_batch_outputs(
    config: ExperimentConfig, traces: list[RegretTrace], aggregate: AggregateTrace
) -> None:
    out = config.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"failed to create output directory {out}: {exc}") from exc
    for r, trace in enumerate(traces):
        write_trace(trace, out / f"episode_{r:03d}.csv")
        _write_clicks(trace, out / f"clicks_{r:03d}.csv")
    write_trace(aggregate, out / "aggregate.csv")
    _write_text(
        out / "config.json",
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
    )


def read_trace_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read any of the package's trace CSVs into named float columns."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(row[idx]) for row in rows]) for idx, name in enumerate(header)}
    return cols
