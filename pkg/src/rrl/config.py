"""INI-style experiment configuration.

Sections and keys (defaults in parentheses)::

    [economy]     lambda (-0.5), beta (0.8), gamma (1.0), consumption (1.0),
                  pi_hat_before (1.0), pi_hat_after (1.1)
    [experiment]  episodes, periods_per_episode, switch_period,
                  post_switch_episodes, seeds, exploration,
                  learning_after_switch, initial_spread, experience_levels
    [agent]       exploration_sigma (0.2) plus every AgentConfig field
                  except ``ou_sigma`` and ``discount`` (taken from beta)

Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from rrl.ddpg import AgentConfig
from rrl.economy import DegenerateExponent, EconomyError, Regime
from rrl.harness import ExperimentConfig


class BadConfig(ValueError):
    pass


ECONOMY_KEYS = {"lambda": -0.5, "beta": 0.8, "gamma": 1.0, "consumption": 1.0,
                "pi_hat_before": 1.0, "pi_hat_after": 1.1}
EXPERIMENT_KEYS = ("episodes", "periods_per_episode", "switch_period", "post_switch_episodes", "seeds",
                   "exploration", "learning_after_switch", "initial_spread", "experience_levels")
AGENT_RENAMES = {"exploration_sigma": "ou_sigma"}
AGENT_KEYS = ({f.name for f in fields(AgentConfig)} - {"ou_sigma", "discount"}) | set(AGENT_RENAMES)


def _parse_value(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    raise TypeError(type(like))


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise BadConfig(f"{source}: {exc}") from exc
    allowed = {"economy": set(ECONOMY_KEYS), "experiment": set(EXPERIMENT_KEYS), "agent": AGENT_KEYS}
    for section in parser.sections():
        if section not in allowed:
            raise BadConfig(f"{source}: unknown section [{section}]")
        unknown = set(parser[section]) - allowed[section]
        if unknown:
            raise BadConfig(f"{source}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, default):
        if not parser.has_option(section, key):
            return default
        try:
            return _parse_value(parser[section][key], default)
        except (ValueError, TypeError) as exc:
            raise BadConfig(f"{source}: [{section}] {key}: {exc}") from exc

    econ = {k: get("economy", k, v) for k, v in ECONOMY_KEYS.items()}
    agent_defaults = AgentConfig()
    agent_kw = {"discount": econ["beta"]}
    for key in AGENT_KEYS:
        name = AGENT_RENAMES.get(key, key)
        agent_kw[name] = get("agent", key, getattr(agent_defaults, name))
    exp_defaults = ExperimentConfig()
    exp_kw = {k: get("experiment", k, getattr(exp_defaults, k)) for k in EXPERIMENT_KEYS}
    try:
        regimes = [Regime(pi_hat=econ[key], lam=econ["lambda"], beta=econ["beta"], gamma=econ["gamma"],
                          consumption=econ["consumption"]) for key in ("pi_hat_before", "pi_hat_after")]
        return ExperimentConfig(regime_before=regimes[0], regime_after=regimes[1],
                                agent=AgentConfig(**agent_kw), **exp_kw)
    except DegenerateExponent as exc:
        raise BadConfig(f"{source}: lambda = {econ['lambda']} gives a degenerate exponent 1/(1+lambda): {exc}") from exc
    except (EconomyError, ValueError) as exc:
        raise BadConfig(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    rb, ra = cfg.regime_before, cfg.regime_after
    lines = ["[economy]",
             f"lambda = {_fmt(rb.lam)}", f"beta = {_fmt(rb.beta)}", f"gamma = {_fmt(rb.gamma)}",
             f"consumption = {_fmt(rb.consumption)}",
             f"pi_hat_before = {_fmt(rb.pi_hat)}", f"pi_hat_after = {_fmt(ra.pi_hat)}", "",
             "[experiment]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in EXPERIMENT_KEYS]
    lines += ["", "[agent]"]
    for key in sorted(AGENT_KEYS):
        lines.append(f"{key} = {_fmt(getattr(cfg.agent, AGENT_RENAMES.get(key, key)))}")
    return "\n".join(lines) + "\n"
