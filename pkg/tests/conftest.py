import pytest

from rrl.ddpg import AgentConfig
from rrl.harness import ExperimentConfig


def small_config(**changes) -> ExperimentConfig:
    agent = AgentConfig(actor_hidden=(16, 16), critic_hidden=(16, 16), minibatch=16, buffer_capacity=2000)
    base = dict(episodes=2, periods_per_episode=60, switch_period=20, post_switch_episodes=2,
                seeds=(0, 1), experience_levels=(1, 2), agent=agent)
    base.update(changes)
    return ExperimentConfig(**base)


@pytest.fixture
def tiny():
    return small_config()


SMALL_INI = """
[economy]
lambda = -0.5
beta = 0.8

[experiment]
episodes = 2
periods_per_episode = 60
switch_period = 20
post_switch_episodes = 2
seeds = 0, 1
experience_levels = 1, 2

[agent]
actor_hidden = 16, 16
critic_hidden = 16, 16
minibatch = 16
buffer_capacity = 2000
"""


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI)
    return path


ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, passed: bool, text: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {text}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
