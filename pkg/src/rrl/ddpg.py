"""Deep deterministic policy gradient agent that forms inflation beliefs.

The actor maps the macro state ``(pi_prev, belief_prev, m_prev)`` to a belief
inside the action bounds; the critic scores (state, belief) pairs. Both see
inputs through :func:`normalize_state` / :func:`normalize_action`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from rrl import nn
from rrl.economy import ACTION_HIGH, ACTION_LOW, MacroState

STATE_SHIFT = np.array([1.0, 1.0, 4.0])
STATE_SCALE = np.array([10.0, 10.0, 0.5])
ACTION_SHIFT = 1.0
ACTION_SCALE = 10.0

CHECKPOINT_NETS = ("actor", "critic", "actor_target", "critic_target")


class BufferTooSmall(RuntimeError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def normalize_state(s: np.ndarray) -> np.ndarray:
    return (np.asarray(s, dtype=np.float64) - STATE_SHIFT) * STATE_SCALE


def denormalize_state(z: np.ndarray) -> np.ndarray:
    return np.asarray(z) / STATE_SCALE + STATE_SHIFT


def normalize_action(a) -> np.ndarray:
    return (np.asarray(a, dtype=np.float64) - ACTION_SHIFT) * ACTION_SCALE


@dataclass(frozen=True)
class Transition:
    s: MacroState
    a: float
    r: float
    s_next: MacroState


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, 3))
        self.a = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, 3))
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        k = self.cursor
        self.s[k] = t.s.as_array()
        self.a[k] = t.a
        self.r[k] = t.r
        self.s_next[k] = t.s_next.as_array()
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise BufferTooSmall("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def batch(self, idx: np.ndarray):
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx]

    def transition(self, k: int) -> Transition:
        if not 0 <= k < self.size:
            raise IndexError(k)
        return Transition(MacroState(*self.s[k]), float(self.a[k]), float(self.r[k]),
                          MacroState(*self.s_next[k]))

    def state_dict(self) -> dict:
        return {"s": self.s[:self.size], "a": self.a[:self.size], "r": self.r[:self.size],
                "s_next": self.s_next[:self.size], "cursor": self.cursor, "capacity": self.capacity}

    @classmethod
    def from_state_dict(cls, d) -> "ReplayBuffer":
        buf = cls(int(d["capacity"]))
        n = len(d["a"])
        buf.s[:n], buf.a[:n], buf.r[:n], buf.s_next[:n] = d["s"], d["a"], d["r"], d["s_next"]
        buf.size = n
        buf.cursor = int(d["cursor"])
        return buf


@dataclass
class OuNoise:
    """Discretised Ornstein-Uhlenbeck process reverting to zero.

    ``sigma`` shrinks by ``decay`` at every episode boundary but never below
    ``sigma_floor``, so exploration never switches off entirely.
    """

    theta: float = 0.15
    sigma: float = 0.2
    sigma_floor: float = 0.02
    decay: float = 0.97
    dt: float = 1.0
    x: float = 0.0

    def __post_init__(self):
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        self.sigma = max(self.sigma, self.sigma_floor)

    def sample(self, rng: np.random.Generator) -> float:
        self.x = (self.x + self.theta * (0.0 - self.x) * self.dt
                  + self.sigma * math.sqrt(self.dt) * rng.standard_normal())
        return self.x

    def end_episode(self) -> None:
        self.sigma = max(self.sigma * self.decay, self.sigma_floor)
        self.x = 0.0

    def stationary_std(self) -> float:
        th, dt = self.theta, self.dt
        return self.sigma * math.sqrt(dt / (2 * th * dt - th * th * dt * dt))


@dataclass
class AgentConfig:
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    final_init: float = 3e-3
    discount: float = 0.8
    minibatch: int = 64
    buffer_capacity: int = 50_000
    tau_soft: float = 0.01
    use_target_networks: bool = True
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_sigma_floor: float = 0.005
    ou_decay: float = 0.8
    ou_dt: float = 1.0
    action_low: float = ACTION_LOW
    action_high: float = ACTION_HIGH
    exploration_enabled: bool = True
    learning_enabled: bool = True

    def __post_init__(self):
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if not 0 <= self.tau_soft <= 1:
            raise ValueError("tau_soft must lie in [0, 1]")
        if self.minibatch < 1 or self.buffer_capacity < self.minibatch:
            raise ValueError("need 1 <= minibatch <= buffer_capacity")
        if not self.action_low < self.action_high:
            raise ValueError("empty action bounds")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def soft_update(live: nn.Mlp, target: nn.Mlp, tau_soft: float) -> None:
    if not live.same_shape(target):
        raise nn.DimensionMismatch("live and target networks differ in shape")
    for p, q in zip(live.parameters(), target.parameters()):
        q *= 1.0 - tau_soft
        q += tau_soft * p


class Agent:
    def __init__(self, config: AgentConfig, rng: np.random.Generator, build: bool = True):
        self.config = config
        self.rng = rng
        c = config
        if build:
            self.actor = nn.Mlp.build([3, *c.actor_hidden, 1], rng, "tanh", "scaled_sigmoid",
                                      (c.action_low, c.action_high), c.final_init)
            self.critic = nn.Mlp.build([4, *c.critic_hidden, 1], rng, "tanh", "linear",
                                       final_scale=c.final_init)
            self.actor_target = self.actor.copy()
            self.critic_target = self.critic.copy()
            self.reset_optimizers()
        self.buffer = ReplayBuffer(c.buffer_capacity)
        self.noise = OuNoise(c.ou_theta, c.ou_sigma, c.ou_sigma_floor, c.ou_decay, c.ou_dt)
        self.train_steps = 0

    def reset_optimizers(self) -> None:
        c = self.config
        self.actor_opt = nn.Adam(self.actor, c.actor_lr, c.adam_beta1, c.adam_beta2, c.adam_eps)
        self.critic_opt = nn.Adam(self.critic, c.critic_lr, c.adam_beta1, c.adam_beta2, c.adam_eps)

    @property
    def beta(self) -> float:
        return self.config.discount

    @property
    def exploration_enabled(self) -> bool:
        return self.config.exploration_enabled

    @property
    def learning_enabled(self) -> bool:
        return self.config.learning_enabled

    def set_flags(self, exploration: bool | None = None, learning: bool | None = None) -> None:
        if exploration is not None:
            self.config.exploration_enabled = bool(exploration)
        if learning is not None:
            self.config.learning_enabled = bool(learning)

    def _eval_nets(self):
        if self.config.use_target_networks:
            return self.actor_target, self.critic_target
        return self.actor, self.critic

    def policy(self, s, actor: nn.Mlp | None = None) -> np.ndarray:
        """Deterministic actor output for raw state(s); no noise, no clamp."""
        actor = actor or self.actor
        return actor.predict(normalize_state(s))[..., 0]

    def q_value(self, s, a, critic: nn.Mlp | None = None) -> np.ndarray:
        critic = critic or self.critic
        return critic.predict(critic_input(s, a))[..., 0]

    def act(self, state: MacroState) -> float:
        a = float(self.policy(state.as_array()))
        if self.config.exploration_enabled:
            a += self.noise.sample(self.rng)
        return min(max(a, self.config.action_low), self.config.action_high)

    def observe(self, t: Transition) -> None:
        self.buffer.add(t)

    def td_targets(self, r, s_next) -> np.ndarray:
        actor, critic = self._eval_nets()
        a_next = self.policy(s_next, actor)
        return np.asarray(r) + self.beta * self.q_value(s_next, a_next, critic)

    def td_target(self, t: Transition) -> float:
        return float(self.td_targets(np.array([t.r]), t.s_next.as_array()[None, :])[0])

    def train_step(self) -> tuple[float, float]:
        """One critic and one actor update on a uniform minibatch.

        Returns the minibatch critic loss before the critic update and the
        mean critic score of the actor's actions before the actor update.
        """
        c = self.config
        n = c.minibatch
        if len(self.buffer) < n:
            raise BufferTooSmall(f"buffer holds {len(self.buffer)} < minibatch {n}")
        idx = self.buffer.sample_indices(n, self.rng)
        s, a, r, s_next = self.buffer.batch(idx)
        y = self.td_targets(r, s_next)

        q = self.critic.forward(critic_input(s, a))[:, 0]
        err = q - y
        loss = float(np.mean(err ** 2))
        if c.learning_enabled:
            self.critic.zero_grad()
            self.critic.backward((2.0 * err / n)[:, None])
            nn.apply_gradients(self.critic, self.critic_opt)

        zs = normalize_state(s)
        a_pi = self.actor.forward(zs)[:, 0]
        q_pi = self.critic.forward(critic_input(s, a_pi))[:, 0]
        objective = float(np.mean(q_pi))
        if c.learning_enabled:
            # gradient of -J; critic parameters stay fixed
            g_in = self.critic.backward(np.full((n, 1), -1.0 / n))
            self.critic.zero_grad()
            self.actor.zero_grad()
            self.actor.backward((g_in[:, 3] * ACTION_SCALE)[:, None])
            nn.apply_gradients(self.actor, self.actor_opt)
            if c.use_target_networks:
                soft_update(self.actor, self.actor_target, c.tau_soft)
                soft_update(self.critic, self.critic_target, c.tau_soft)
            self.train_steps += 1
        if not (math.isfinite(loss) and math.isfinite(objective)):
            raise NonFiniteLoss(f"critic loss {loss}, actor objective {objective}")
        return loss, objective

    def end_episode(self) -> None:
        self.noise.end_episode()

    def snapshot(self) -> "Agent":
        """Deep copy of networks, noise, buffer and RNG."""
        other = Agent(AgentConfig.from_dict(self.config.to_dict()), _copy_rng(self.rng), build=False)
        other.actor, other.critic = self.actor.copy(), self.critic.copy()
        other.actor_target, other.critic_target = self.actor_target.copy(), self.critic_target.copy()
        other.reset_optimizers()
        other.noise = OuNoise(**asdict(self.noise))
        other.buffer = ReplayBuffer.from_state_dict(self.buffer.state_dict())
        other.train_steps = self.train_steps
        return other


def critic_input(s, a) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    return np.concatenate([normalize_state(s), normalize_action(a)[..., None]], axis=-1)


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    g = np.random.Generator(type(rng.bit_generator)())
    g.bit_generator.state = rng.bit_generator.state
    return g


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(agent: Agent, directory, extra: dict | None = None,
                    include_buffer: bool = False) -> Path:
    """Write the four networks as parameter blobs plus an ``agent.json`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in CHECKPOINT_NETS:
        nn.save(getattr(agent, name), directory / name)
    manifest = {
        "format": "rrl-checkpoint",
        "version": 1,
        "networks": {name: f"{name}.bin" for name in CHECKPOINT_NETS},
        "agent_config": agent.config.to_dict(),
        "noise": asdict(agent.noise),
        "rng_state": agent.rng.bit_generator.state,
        "train_steps": agent.train_steps,
        "buffer": None,
        "extra": extra or {},
    }
    if include_buffer:
        np.savez(directory / "buffer.npz", **agent.buffer.state_dict())
        manifest["buffer"] = "buffer.npz"
    tmp = directory / "agent.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(directory / "agent.json")
    return directory


def load_checkpoint(directory, config: AgentConfig | None = None) -> tuple[Agent, dict]:
    """Rebuild an agent; ``config`` (if given) must describe the same architecture."""
    directory = Path(directory)
    path = directory / "agent.json"
    if not path.exists():
        raise CheckpointError(f"no agent.json in {directory}")
    manifest = json.loads(path.read_text())
    stored = AgentConfig.from_dict(manifest["agent_config"])
    if config is None:
        config = stored
    elif (config.actor_hidden, config.critic_hidden, config.action_low, config.action_high) != (
            stored.actor_hidden, stored.critic_hidden, stored.action_low, stored.action_high):
        raise CheckpointError(
            f"checkpoint architecture actor={stored.actor_hidden} critic={stored.critic_hidden} "
            f"bounds=({stored.action_low}, {stored.action_high}) does not match the configuration")
    agent = Agent(config, rng_from_state(manifest["rng_state"]), build=False)
    for name in CHECKPOINT_NETS:
        setattr(agent, name, nn.load(directory / name))
    expected = {
        "actor": [3, *config.actor_hidden, 1],
        "critic": [4, *config.critic_hidden, 1],
    }
    for name in CHECKPOINT_NETS:
        net = getattr(agent, name)
        sizes = [net.n_in] + [l.n_out for l in net.layers]
        if sizes != expected[name.split("_")[0]]:
            raise CheckpointError(f"{name} has layer sizes {sizes}, expected {expected[name.split('_')[0]]}")
    agent.reset_optimizers()
    noise = dict(manifest["noise"])
    agent.noise = OuNoise(**noise)
    agent.train_steps = manifest.get("train_steps", 0)
    if manifest.get("buffer"):
        with np.load(directory / manifest["buffer"]) as data:
            buf = ReplayBuffer.from_state_dict({k: data[k] for k in data.files})
        if buf.capacity != config.buffer_capacity:
            buf2 = ReplayBuffer(config.buffer_capacity)
            for k in range(buf.size):
                buf2.add(buf.transition(k))
            buf = buf2
        agent.buffer = buf
    return agent, manifest
