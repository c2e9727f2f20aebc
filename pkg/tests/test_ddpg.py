import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rrl import nn
from rrl.ddpg import (ACTION_SCALE, Agent, AgentConfig, BufferTooSmall, CheckpointError, OuNoise,
                      ReplayBuffer, Transition, critic_input, load_checkpoint, normalize_state,
                      save_checkpoint, soft_update)
from rrl.economy import MacroState

from oracles import QuadraticCritic, manual_td

S0 = MacroState(1.0, 1.0, 5.0)
S1 = MacroState(1.21, 1.1, 3.6667)


def make_agent(seed=0, **kw):
    kw.setdefault("actor_hidden", (8, 8))
    kw.setdefault("critic_hidden", (8, 8))
    return Agent(AgentConfig(**kw), np.random.default_rng(seed))


def rig_actor_output(agent, value):
    last = agent.actor.layers[-1]
    last.weight[:] = 0.0
    lo, hi = last.bounds
    p = (value - lo) / (hi - lo)
    last.bias[:] = math.log(p / (1 - p))


def rig_critic_constant(net, c):
    net.layers[-1].weight[:] = 0.0
    net.layers[-1].bias[:] = c


class FixedNoise:
    sigma = 0.1

    def __init__(self, value):
        self.value = value

    def sample(self, rng):
        return self.value


# act ---------------------------------------------------------------------

def test_act_without_exploration_passes_actor_output():
    agent = make_agent(exploration_enabled=False)
    rig_actor_output(agent, 1.05)
    assert agent.act(S0) == pytest.approx(1.05, abs=1e-12)


def test_act_clamps_after_noise():
    agent = make_agent()
    rig_actor_output(agent, 1.39)
    agent.noise = FixedNoise(0.08)
    assert agent.act(S0) == 1.4
    agent.noise = FixedNoise(-0.6)
    assert agent.act(S0) == 0.9


def test_ou_stationary_std():
    noise = OuNoise(theta=0.15, sigma=0.2, dt=1.0)
    rng = np.random.default_rng(42)
    xs = np.array([noise.sample(rng) for _ in range(100_000)])
    # stationary variance of x' = (1 - theta dt) x + sigma sqrt(dt) e
    oracle = math.sqrt(0.2 ** 2 * 1.0 / (2 * 0.15 - 0.15 ** 2))
    assert noise.stationary_std() == pytest.approx(oracle)
    assert abs(xs[1000:].std() - oracle) <= 0.1 * oracle


def test_ou_recursion_matches_definition():
    noise = OuNoise(theta=0.15, sigma=0.2, dt=0.5)
    rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(1)
    x = 0.0
    for _ in range(10):
        x = x + 0.15 * (0 - x) * 0.5 + 0.2 * math.sqrt(0.5) * rng_b.standard_normal()
        assert noise.sample(rng_a) == pytest.approx(x, rel=1e-15)


@given(st.integers(0, 500), st.floats(0.01, 1.0), st.floats(1e-4, 0.1))
def test_sigma_never_below_floor(episodes, decay, floor):
    noise = OuNoise(sigma=0.2, sigma_floor=floor, decay=decay)
    for _ in range(episodes):
        noise.end_episode()
        assert noise.sigma >= floor > 0
        assert noise.x == 0.0


def test_noise_floor_must_be_positive():
    with pytest.raises(ValueError):
        OuNoise(sigma_floor=0.0)


# replay ------------------------------------------------------------------

def test_observe_grows_then_evicts_fifo():
    agent = make_agent(buffer_capacity=64, minibatch=2)
    agent.observe(Transition(S0, 1.0, 0.0, S1))
    assert len(agent.buffer) == 1
    buf = ReplayBuffer(2)
    for k in range(3):
        buf.add(Transition(S0, 1.0 + k / 10, -k / 10, S1))
    assert len(buf) == 2
    assert sorted(buf.a[:2].tolist()) == pytest.approx([1.1, 1.2])


def test_uniform_sampling_frequencies():
    buf = ReplayBuffer(20_000)
    for k in range(10_000):
        buf.add(Transition(S0, 1.0, -k * 1e-6, S1))
    rng = np.random.default_rng(7)
    # ~100 expected hits per stored index keeps the binomial close to normal
    idx = buf.sample_indices(1_000_000, rng)
    assert idx.max() < len(buf) and idx.min() >= 0
    counts = np.bincount(idx, minlength=len(buf))
    n, p = idx.size, 1.0 / len(buf)
    sd = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 5 * sd)
    chi2 = np.sum((counts - n * p) ** 2 / (n * p))
    dof = len(buf) - 1
    assert abs(chi2 - dof) <= 5 * math.sqrt(2 * dof)


@given(st.integers(1, 50), st.integers(1, 200))
def test_sampling_stays_inside_current_size(capacity, adds):
    buf = ReplayBuffer(capacity)
    for _ in range(adds):
        buf.add(Transition(S0, 1.0, 0.0, S1))
    idx = buf.sample_indices(100, np.random.default_rng(adds))
    assert idx.max() < len(buf) == min(capacity, adds)


# td target ---------------------------------------------------------------

@pytest.mark.parametrize("targets", [True, False])
def test_td_target_zero_critic(targets):
    agent = make_agent(use_target_networks=targets)
    rig_critic_constant(agent.critic, 0.0)
    rig_critic_constant(agent.critic_target, 0.0)
    assert agent.td_target(Transition(S0, 1.0, -0.1, S1)) == pytest.approx(-0.1, abs=1e-15)


def test_td_target_constant_critic():
    agent = make_agent(use_target_networks=False)
    rig_critic_constant(agent.critic, 2.0)
    assert agent.td_target(Transition(S0, 1.0, 0.0, S1)) == pytest.approx(1.6, rel=1e-15)


@pytest.mark.parametrize("use_targets", [True, False])
def test_td_target_matches_hand_chain(use_targets):
    agent = make_agent(3, actor_hidden=(64, 64), critic_hidden=(64, 64), use_target_networks=use_targets,
                       final_init=0.5)
    agent.actor_target.set_flat(agent.actor.get_flat() * 0.9)
    agent.critic_target.set_flat(agent.critic.get_flat() * 1.1)
    t = Transition(S0, 1.02, -0.03, MacroState(1.0404, 1.02, 4.6364))
    assert agent.td_target(t) == pytest.approx(manual_td(agent, t, use_targets), abs=1e-12)


# train step --------------------------------------------------------------

def test_train_step_needs_full_minibatch():
    agent = make_agent(minibatch=4)
    for _ in range(3):
        agent.observe(Transition(S0, 1.0, 0.0, S1))
    with pytest.raises(BufferTooSmall):
        agent.train_step()


def test_frozen_agent_parameters_unchanged():
    agent = make_agent(minibatch=4, learning_enabled=False)
    for k in range(10):
        agent.observe(Transition(S0, 1.0 + k / 100, -k / 100, S1))
    before = [n.get_flat().copy() for n in (agent.actor, agent.critic, agent.actor_target, agent.critic_target)]
    loss, _ = agent.train_step()
    after = [n.get_flat() for n in (agent.actor, agent.critic, agent.actor_target, agent.critic_target)]
    assert loss >= 0
    assert all(np.array_equal(x, y) for x, y in zip(before, after))


def test_critic_loss_decreases_on_degenerate_buffer():
    # frozen targets turn the critic update into a scalar regression
    agent = make_agent(5, minibatch=8, tau_soft=0.0, critic_lr=1e-5)
    for _ in range(8):
        agent.observe(Transition(S0, 1.0, -0.1, S1))
    losses = [agent.train_step()[0] for _ in range(100)]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert min(losses) >= 0


def test_rigged_critic_pulls_actor_to_optimum():
    passed = 0
    for k in range(100):
        rng = np.random.default_rng(1000 + k)
        agent = make_agent(k, minibatch=16, use_target_networks=False, actor_lr=1e-3)
        agent.critic = QuadraticCritic()
        agent.reset_optimizers()
        agent.actor.layers[-1].bias[:] = rng.uniform(-2.0, 2.0)
        s = MacroState(rng.uniform(0.8, 1.5), rng.uniform(0.9, 1.4), rng.uniform(2.5, 8.0))
        for _ in range(16):
            agent.observe(Transition(s, 1.0, -0.01, s))
        before = abs(agent.policy(s.as_array()) - 1.1)
        agent.train_step()
        passed += abs(agent.policy(s.as_array()) - 1.1) < before
    assert passed == 100


def test_actor_update_is_ascent_direction():
    agent = make_agent(9, minibatch=32, critic_lr=0.0, use_target_networks=False, final_init=0.3)
    rng = np.random.default_rng(9)
    for _ in range(32):
        s = MacroState(rng.uniform(0.9, 1.3), rng.uniform(0.9, 1.4), rng.uniform(3, 7))
        agent.observe(Transition(s, float(rng.uniform(0.9, 1.4)), -0.05, s))
    probe = agent.rng.bit_generator.state
    idx = agent.buffer.sample_indices(32, agent.rng)
    agent.rng.bit_generator.state = probe
    s = agent.buffer.s[idx]
    # analytic gradient of J = mean Q(s, mu(s)) with the critic held fixed
    a = agent.actor.forward(normalize_state(s))[:, 0]
    agent.critic.forward(critic_input(s, a))
    g_in = agent.critic.backward(np.full((32, 1), 1.0 / 32))
    agent.actor.zero_grad()
    agent.actor.backward((g_in[:, 3] * ACTION_SCALE)[:, None])
    grad_j = np.concatenate([g.ravel() for g in agent.actor.gradients()])
    agent.actor.zero_grad()
    agent.critic.zero_grad()
    before = agent.actor.get_flat().copy()
    _, j_before = agent.train_step()
    delta = agent.actor.get_flat() - before
    assert float(delta @ grad_j) >= 0
    j_after = float(np.mean(agent.q_value(s, agent.policy(s))))
    assert j_after >= j_before - 1e-9


def test_frozen_policy_is_constant_for_fixed_states():
    agent = make_agent(2, exploration_enabled=False, learning_enabled=False, minibatch=2)
    states = [S0, S1, S0, S1]
    first = [agent.act(s) for s in states]
    for s in states:
        agent.observe(Transition(s, 1.0, -0.1, s))
    agent.train_step()
    assert [agent.act(s) for s in states] == first


# soft update -------------------------------------------------------------

def scalar(v):
    return nn.Mlp([nn.Layer([[v]], [v])])


@pytest.mark.parametrize("tau, expected", [(1.0, 2.0), (0.0, 0.0), (0.5, 1.0)])
def test_soft_update(tau, expected):
    live, target = scalar(2.0), scalar(0.0)
    soft_update(live, target, tau)
    assert target.get_flat() == pytest.approx([expected, expected])


def test_soft_update_shape_mismatch():
    with pytest.raises(nn.DimensionMismatch):
        soft_update(scalar(1.0), nn.Mlp([nn.Layer(np.zeros((2, 1)), np.zeros(2))]), 0.5)


# checkpoint --------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    agent = make_agent(4, minibatch=4)
    for k in range(6):
        agent.observe(Transition(S0, 1.0 + k / 50, -k / 50, S1))
    agent.train_step()
    agent.end_episode()
    save_checkpoint(agent, tmp_path, include_buffer=True)
    back, manifest = load_checkpoint(tmp_path)
    for name in ("actor", "critic", "actor_target", "critic_target"):
        assert np.array_equal(getattr(back, name).get_flat(), getattr(agent, name).get_flat())
    assert back.noise == agent.noise
    assert back.rng.random() == agent.rng.random()
    assert len(back.buffer) == 6
    assert np.array_equal(back.buffer.r[:6], agent.buffer.r[:6])


def test_checkpoint_excludes_buffer_by_default(tmp_path):
    agent = make_agent()
    agent.observe(Transition(S0, 1.0, 0.0, S1))
    save_checkpoint(agent, tmp_path)
    back, manifest = load_checkpoint(tmp_path)
    assert manifest["buffer"] is None and len(back.buffer) == 0


def test_checkpoint_architecture_mismatch(tmp_path):
    save_checkpoint(make_agent(), tmp_path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path, AgentConfig(actor_hidden=(16, 16), critic_hidden=(8, 8)))
