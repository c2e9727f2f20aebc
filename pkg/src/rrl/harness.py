"""Experiment orchestration: training, unannounced regime switches, experience sweeps.

Every run is driven by two independent random streams derived from the seed:
the *environment* stream (initial conditions) and the *agent* stream (network
initialisation, exploration noise, minibatch sampling). Experience sweeps
share the environment stream across levels so that all agents face identical
initial conditions.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rrl import economy
from rrl.ddpg import (Agent, AgentConfig, NonFiniteLoss, ReplayBuffer, Transition, load_checkpoint,
                      rng_from_state, save_checkpoint)
from rrl.economy import MacroState, Regime

log = logging.getLogger(__name__)

CSV_HEADER = ("seed", "episode", "period", "regime_id", "belief", "pi", "i", "m", "reward",
              "sigma", "critic_loss", "actor_objective")
FLOAT_COLUMNS = CSV_HEADER[4:]
INT_COLUMNS = CSV_HEADER[:4]
WINDOW = 100


class EmptyInput(ValueError):
    pass


class SeedAborted(RuntimeError):
    def __init__(self, seed, reason):
        super().__init__(f"seed {seed} aborted: {reason}")
        self.seed = seed
        self.reason = reason


@dataclass
class ExperimentConfig:
    regime_before: Regime = field(default_factory=lambda: Regime(pi_hat=1.0))
    regime_after: Regime = field(default_factory=lambda: Regime(pi_hat=1.1))
    switch_period: int = 100
    episodes: int = 20
    periods_per_episode: int = 500
    post_switch_episodes: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    exploration: bool = True
    learning_after_switch: bool = True
    initial_spread: float = 0.05
    experience_levels: tuple[int, ...] = (5, 10, 15, 20)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.experience_levels = tuple(int(k) for k in self.experience_levels)
        if self.episodes < 1 or self.periods_per_episode < 1:
            raise ValueError("episodes and periods_per_episode must be >= 1")
        if self.post_switch_episodes < 1:
            raise ValueError("post_switch_episodes must be >= 1")
        if not 0 <= self.switch_period < self.switch_horizon:
            raise ValueError("switch_period lies outside the simulated horizon")
        for r in (self.regime_before, self.regime_after):
            if r.beta != self.agent.discount:
                raise ValueError(f"agent discount {self.agent.discount} differs from regime beta {r.beta}")
            if r.pi_hat <= r.beta or self.agent.action_low <= r.beta:
                raise ValueError("beliefs inside the action bounds must exceed beta")

    @property
    def post_switch_periods(self) -> int:
        return self.post_switch_episodes * self.periods_per_episode

    @property
    def switch_horizon(self) -> int:
        return self.switch_period + self.post_switch_periods

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        new.__post_init__()
        return new


@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    episode: int
    period: int
    regime_id: int
    belief: float
    pi: float
    i: float
    m: float
    reward: float
    sigma: float
    critic_loss: float
    actor_objective: float


class Trajectory:
    """Columns of one run (one seed, one arm), plus identifying labels."""

    def __init__(self, columns: dict[str, np.ndarray], arm: str, seed: int, **labels):
        self.columns = columns
        self.arm = arm
        self.seed = seed
        self.labels = labels

    @classmethod
    def from_records(cls, records: Sequence[TrajectoryRecord], arm: str, seed: int, **labels):
        cols = {}
        for name in CSV_HEADER:
            dtype = np.int64 if name in INT_COLUMNS else np.float64
            cols[name] = np.array([getattr(r, name) for r in records], dtype=dtype)
        return cls(cols, arm, seed, **labels)

    def __len__(self):
        return len(self.columns["period"])

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def records(self) -> list[TrajectoryRecord]:
        return [TrajectoryRecord(*row) for row in zip(*(self.columns[c].tolist() for c in CSV_HEADER))]

    def post_switch(self) -> "Trajectory":
        mask = self.columns["regime_id"] == 1
        return Trajectory({k: v[mask] for k, v in self.columns.items()}, self.arm, self.seed, **self.labels)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            cols = [self.columns[c] for c in CSV_HEADER]
            for k in range(len(self)):
                w.writerow([str(int(c[k])) if j < 4 else format(float(c[k]), ".12g")
                            for j, c in enumerate(cols)])
        return path

    @classmethod
    def read_csv(cls, path, arm: str | None = None, **labels) -> "Trajectory":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = list(reader)
        cols = {}
        for j, name in enumerate(CSV_HEADER):
            if name in INT_COLUMNS:
                cols[name] = np.array([int(r[j]) for r in rows], dtype=np.int64)
            else:
                cols[name] = np.array([float(r[j]) for r in rows], dtype=np.float64)
        seed = int(cols["seed"][0]) if rows else -1
        return cls(cols, arm or path.parent.name, seed, **labels)


@dataclass
class Checkpoint:
    """Trained agent plus the economy state it left behind."""

    agent: Agent
    state: MacroState
    env_rng_state: dict
    seed: int
    episodes_trained: int
    include_buffer: bool = False

    def restore(self) -> tuple[Agent, MacroState, np.random.Generator]:
        """Fresh copy of the agent as it would come back from disk."""
        agent = self.agent.snapshot()
        if not self.include_buffer:
            agent.buffer = ReplayBuffer(agent.config.buffer_capacity)
        return agent, self.state, rng_from_state(self.env_rng_state)

    def save(self, directory, include_buffer: bool | None = None) -> Path:
        include_buffer = self.include_buffer if include_buffer is None else include_buffer
        extra = {"state": [self.state.pi_prev, self.state.belief_prev, self.state.m_prev],
                 "env_rng_state": self.env_rng_state, "seed": self.seed,
                 "episodes_trained": self.episodes_trained}
        return save_checkpoint(self.agent, directory, extra, include_buffer)

    @classmethod
    def load(cls, directory, config: AgentConfig | None = None) -> "Checkpoint":
        agent, manifest = load_checkpoint(directory, config)
        extra = manifest["extra"]
        return cls(agent, MacroState(*extra["state"]), extra["env_rng_state"], int(extra["seed"]),
                   int(extra["episodes_trained"]), include_buffer=manifest["buffer"] is not None)


def rng_streams(seed: int, level: int = 0) -> tuple[np.random.Generator, np.random.Generator]:
    """(environment, agent) generators; the environment stream ignores ``level``."""
    env = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    agent = np.random.default_rng(np.random.SeedSequence([int(seed), 1, int(level)]))
    return env, agent


def _advance(agent: Agent, state: MacroState, regime: Regime, learn: bool = True):
    sigma = agent.noise.sigma if agent.exploration_enabled else 0.0
    a = agent.act(state)
    out = economy.step(state, a, regime)
    agent.observe(Transition(state, a, out.reward, out.next_state))
    loss = objective = 0.0
    if learn and len(agent.buffer) >= agent.config.minibatch:
        loss, objective = agent.train_step()
    return a, out, sigma, loss, objective


def run_training(config: ExperimentConfig, seed: int, episodes: int | None = None,
                 level: int = 0) -> tuple[Trajectory, Checkpoint]:
    """Train from scratch under ``regime_before`` for ``episodes`` x ``periods_per_episode``."""
    episodes = config.episodes if episodes is None else episodes
    env_rng, agent_rng = rng_streams(seed, level)
    agent = Agent(AgentConfig.from_dict(config.agent.to_dict()), agent_rng)
    regime = config.regime_before
    records = []
    t = 0
    state = None
    try:
        for ep in range(episodes):
            state = economy.initial_state(regime, env_rng, config.initial_spread,
                                          agent.config.action_low, agent.config.action_high)
            for _ in range(config.periods_per_episode):
                a, out, sigma, loss, obj = _advance(agent, state, regime)
                records.append(TrajectoryRecord(seed, ep, t, 0, a, out.pi, out.i, out.m, out.reward,
                                                sigma, loss, obj))
                state = out.next_state
                t += 1
            agent.end_episode()
            log.debug("seed %d episode %d sigma %.4f", seed, ep, agent.noise.sigma)
    except NonFiniteLoss as exc:
        raise SeedAborted(seed, str(exc)) from exc
    traj = Trajectory.from_records(records, "train", seed, level=level)
    ckpt = Checkpoint(agent, state, env_rng.bit_generator.state, seed, episodes)
    return traj, ckpt


def run_regime_switch(checkpoint: Checkpoint, config: ExperimentConfig, arm: str | None = None,
                      exploration: bool | None = None, learning: bool | None = None) -> Trajectory:
    """Continue from ``checkpoint``; the target changes silently at ``switch_period``.

    Before the switch the agent behaves exactly as it did in training, so
    arms sharing a checkpoint produce identical rows up to the switch. The
    arm's exploration/learning flags take effect at the switch.
    """
    exploration = config.exploration if exploration is None else exploration
    learning = config.learning_after_switch if learning is None else learning
    if arm is None:
        arm = "explore" if exploration else "frozen"
    agent, state, _ = checkpoint.restore()
    agent.set_flags(exploration=True, learning=True)
    T = config.periods_per_episode
    records = []
    regime, regime_id = config.regime_before, 0
    try:
        for t in range(config.switch_horizon):
            if t == config.switch_period:
                regime, regime_id = config.regime_after, 1
                agent.set_flags(exploration=exploration, learning=learning)
            a, out, sigma, loss, obj = _advance(agent, state, regime)
            records.append(TrajectoryRecord(checkpoint.seed, t // T, t, regime_id, a, out.pi, out.i,
                                            out.m, out.reward, sigma, loss, obj))
            state = out.next_state
            if (t + 1) % T == 0:
                agent.end_episode()
    except NonFiniteLoss as exc:
        raise SeedAborted(checkpoint.seed, str(exc)) from exc
    return Trajectory.from_records(records, arm, checkpoint.seed,
                                   episodes_trained=checkpoint.episodes_trained)


def run_experience_comparison(config: ExperimentConfig, seed: int,
                              levels: Iterable[int] | None = None) -> dict[int, Trajectory]:
    """Train one agent per experience level, then apply the same switch to each."""
    levels = tuple(config.experience_levels if levels is None else levels)
    out = {}
    for k in levels:
        _, ckpt = run_training(config, seed, episodes=k, level=k)
        traj = run_regime_switch(ckpt, config, arm=f"ep{k}", exploration=True, learning=True)
        traj.labels["level"] = k
        out[k] = traj
    return out


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("RRL_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


def map_seeds(fn, seeds: Sequence[int], *args):
    """Apply ``fn(*args, seed)`` to each seed, fanning out to processes when allowed."""
    workers = worker_count(len(seeds))
    if workers == 1:
        return [fn(*args, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args, s) for s in seeds]
        return [f.result() for f in futures]


def terminal_mean(x: np.ndarray, window: int = WINDOW) -> float:
    if len(x) == 0:
        raise EmptyInput("empty series")
    return float(np.mean(x[-window:]))


def rolling_mean(x: np.ndarray, window: int = WINDOW) -> np.ndarray:
    """Trailing means; entry k averages x[k-window+1 : k+1] (fewer at the start)."""
    c = np.cumsum(np.concatenate([[0.0], np.asarray(x, dtype=np.float64)]))
    k = np.arange(1, len(x) + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


def summarize(trajectories: Sequence[Trajectory], regimes: dict[int, Regime] | None = None,
              window: int = WINDOW) -> list[dict]:
    """One row per (arm, seed): terminal means, forecast RMSE, distance to steady state.

    Distances are measured against the steady state of the regime in force
    at the end of each trajectory.
    """
    if not trajectories:
        raise EmptyInput("no trajectories to summarize")
    regimes = regimes or {0: Regime(1.0), 1: Regime(1.1)}
    rows = []
    for tr in trajectories:
        if len(tr) == 0:
            raise EmptyInput(f"trajectory {tr.arm}/{tr.seed} is empty")
        final_regime = regimes[int(tr["regime_id"][-1])]
        pi_ss, i_ss, m_ss = economy.steady_state(final_regime)
        means = {c: terminal_mean(tr[c], window) for c in ("belief", "pi", "i", "m")}
        row = {"arm": tr.arm, "seed": tr.seed, "periods": len(tr),
               **{f"terminal_{c}": v for c, v in means.items()},
               "forecast_rmse": float(np.sqrt(np.mean(tr["reward"] ** 2))),
               "dist_belief": abs(means["belief"] - pi_ss),
               "dist_pi": abs(means["pi"] - pi_ss),
               "dist_i": abs(means["i"] - i_ss),
               "dist_m": abs(means["m"] - m_ss)}
        if np.any(tr["regime_id"] == 1):
            row["switch_delay"] = switch_delay(tr)
        row.update({k: v for k, v in tr.labels.items() if isinstance(v, (int, float, str))})
        rows.append(row)
    return rows


def switch_delay(tr: Trajectory, threshold: float = 1.05) -> int:
    """Periods after the switch until the belief first exceeds ``threshold`` (-1 if never)."""
    post = tr.post_switch()["belief"]
    hits = np.flatnonzero(post > threshold)
    return int(hits[0]) if hits.size else -1
