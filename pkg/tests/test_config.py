import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdcvae.config import TrainConfig, parse_run_config, stage_seed
from mdcvae.nn import ConfigError


def test_round_trip_through_items():
    cfg = TrainConfig(mode="symmetric", uae_hidden=(600, 200), lambda_v=0.1, use_content=False, seed=5)
    back = TrainConfig.from_items(dict(cfg.to_items()))
    assert back == cfg


@given(st.floats(0, 1e6, allow_nan=False), st.integers(0, 2**63 - 1))
def test_float_and_seed_survive_text(lam, seed):
    cfg = TrainConfig(lambda_v=lam, seed=seed)
    assert TrainConfig.from_items(dict(cfg.to_items())) == cfg


@pytest.mark.parametrize("bad", [{"mode": "tied"}, {"lambda_v": -1.0}, {"dropout_p": 1.0}, {"k_u": 0},
                                 {"likelihood": "poisson"}, {"epochs": -1}])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        TrainConfig.from_items({"lamda_v": "1"})


def test_run_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nmode = symmetric\nlambda_v = 5  # tuned\n\ninteractions = r.tsv\n")
    assert parse_run_config(p) == {"mode": "symmetric", "lambda_v": "5", "interactions": "r.tsv"}
    p.write_text("modee = symmetric\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_run_config(p)


def test_stage_seeds_distinct():
    seeds = [stage_seed(0, s) for s in ("split", "holdout", "init", "pretrain", "train", "cold", "subsample", "synth")]
    assert len(set(seeds)) == len(seeds)
