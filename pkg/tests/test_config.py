import pytest

from rrl.config import BadConfig, dump_config, load_config, parse_config
from rrl.harness import ExperimentConfig


def test_defaults_carry_baseline_parameters():
    cfg = parse_config("")
    assert cfg.regime_before.lam == -0.5 and cfg.regime_before.beta == 0.8
    assert cfg.agent.ou_sigma == 0.2
    assert cfg.regime_before.pi_hat == 1.0 and cfg.regime_after.pi_hat == 1.1
    assert cfg.agent.discount == 0.8


def test_roundtrip():
    cfg = parse_config("[agent]\nexploration_sigma = 0.3\n[experiment]\nseeds = 7, 8\n")
    assert cfg.agent.ou_sigma == 0.3 and cfg.seeds == (7, 8)
    assert parse_config(dump_config(cfg)) == cfg


def test_baseline_file(tmp_path):
    from pathlib import Path
    cfg = load_config(Path(__file__).parents[1] / "configs" / "baseline.ini")
    assert cfg == ExperimentConfig()


@pytest.mark.parametrize("text", ["[agent]\nactor_lr_typo = 1\n", "[bogus]\nx = 1\n",
                                  "[economy]\ndiscount = 0.9\n"])
def test_unknown_keys_rejected(text):
    with pytest.raises(BadConfig, match="unknown"):
        parse_config(text)


def test_degenerate_lambda():
    with pytest.raises(BadConfig, match="degenerate exponent"):
        parse_config("[economy]\nlambda = -1\n")


@pytest.mark.parametrize("text", ["[economy]\nbeta = 1.5\n", "[experiment]\nepisodes = many\n",
                                  "[agent]\nuse_target_networks = maybe\n"])
def test_bad_values(text):
    with pytest.raises(BadConfig):
        parse_config(text)
