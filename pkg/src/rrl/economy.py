"""Closed-form money-in-utility economy driven by an agent's inflation belief.

Given a belief ``a`` about next period's gross inflation, the economy resolves
in three steps:

* Euler-consistent nominal rate ``i = a / beta``,
* money demand under log utility ``m = gamma * c * i / (i - 1)``,
* realized inflation from inverting the interest rate rule,
  ``pi = (i * beta / pi_hat) ** (1 / (1 + lambda)) * pi_hat``.

The agent is rewarded with ``-|E_{t-1} pi_t - pi_t|``, the absolute error of
the forecast it made one period earlier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTION_LOW = 0.9
ACTION_HIGH = 1.4


class EconomyError(ValueError):
    pass


class BeliefTooLow(EconomyError):
    """Belief at or below beta: the implied nominal rate would not exceed one."""


class RateNotAboveUnity(EconomyError):
    pass


class DegenerateExponent(EconomyError):
    pass


@dataclass(frozen=True)
class Regime:
    pi_hat: float = 1.0
    lam: float = -0.5
    beta: float = 0.8
    gamma: float = 1.0
    consumption: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise EconomyError(f"beta must lie in (0, 1), got {self.beta}")
        if self.pi_hat <= 0:
            raise EconomyError(f"pi_hat must be positive, got {self.pi_hat}")
        if 1.0 + self.lam == 0.0:
            raise DegenerateExponent("1 + lambda = 0: the interest rate rule cannot be inverted")
        if self.gamma <= 0 or self.consumption <= 0:
            raise EconomyError("gamma and consumption must be positive")

    @property
    def passive(self) -> bool:
        return self.lam < 0


@dataclass(frozen=True)
class MacroState:
    pi_prev: float
    belief_prev: float
    m_prev: float

    def as_array(self) -> np.ndarray:
        return np.array([self.pi_prev, self.belief_prev, self.m_prev])

    def is_valid(self, low: float = ACTION_LOW, high: float = ACTION_HIGH) -> bool:
        positive = self.pi_prev > 0 and self.belief_prev > 0 and self.m_prev > 0
        return positive and low <= self.belief_prev <= high


@dataclass(frozen=True)
class StepOutcome:
    i: float
    m: float
    pi: float
    reward: float
    next_state: MacroState
    tau: float


def euler_rate(belief: float, regime: Regime) -> float:
    if belief <= regime.beta:
        raise BeliefTooLow(f"belief {belief} <= beta {regime.beta}")
    return belief / regime.beta


def money_demand(i: float, c: float = 1.0, gamma: float = 1.0) -> float:
    if i <= 1.0:
        raise RateNotAboveUnity(f"gross nominal rate {i} must exceed 1")
    if c <= 0:
        raise EconomyError(f"consumption must be positive, got {c}")
    return gamma * c * i / (i - 1.0)


def realized_inflation(i: float, regime: Regime) -> float:
    if 1.0 + regime.lam == 0.0:
        raise DegenerateExponent("1 + lambda = 0")
    if i <= 0:
        raise RateNotAboveUnity(f"gross nominal rate {i} must be positive")
    return (i * regime.beta / regime.pi_hat) ** (1.0 / (1.0 + regime.lam)) * regime.pi_hat


def reward(belief_prev: float, pi_realized: float) -> float:
    return -abs(belief_prev - pi_realized)


def step(state: MacroState, action: float, regime: Regime) -> StepOutcome:
    """Advance the economy one period under the agent's belief ``action``."""
    i = euler_rate(action, regime)
    m = money_demand(i, regime.consumption, regime.gamma)
    pi = realized_inflation(i, regime)
    r = reward(state.belief_prev, pi)
    # government transfer balancing the budget; logged only
    tau = m - state.m_prev / pi
    return StepOutcome(i=i, m=m, pi=pi, reward=r, next_state=MacroState(pi, action, m), tau=tau)


def steady_state(regime: Regime) -> tuple[float, float, float]:
    """Rational-expectations fixed point ``(pi, i, m)`` of ``regime``."""
    i = euler_rate(regime.pi_hat, regime)
    return regime.pi_hat, i, money_demand(i, regime.consumption, regime.gamma)


def initial_state(regime: Regime, rng: np.random.Generator, spread: float = 0.05,
                  low: float = ACTION_LOW, high: float = ACTION_HIGH) -> MacroState:
    """Steady state with uniform +-spread jitter on lagged inflation and belief."""
    pi, _, m = steady_state(regime)
    jitter = rng.uniform(-spread, spread, size=2)
    belief = min(max(regime.pi_hat + jitter[1], low), high)
    return MacroState(pi + jitter[0], belief, m)


def clamp_action(a: float, low: float = ACTION_LOW, high: float = ACTION_HIGH) -> float:
    if math.isnan(a):
        raise EconomyError("action is NaN")
    return min(max(a, low), high)
