from __future__ import annotations

import pytest

from atomchain.chain import RowConvention
from atomchain.config import RunConfig, env_overrides, load_config, read_config_file
from atomchain.orchestrator import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.temperature, cfg.top_p, cfg.top_k, cfg.backend) == (0.8, 0.9, None, "replay")
    assert (cfg.train_size, cfg.val_size) == (350, 50)


def test_precedence_cli_over_env_over_file(tmp_path):
    f = tmp_path / "run.conf"
    f.write_text("# settings\nseed = 1\nmodel_id = from-file\ntop_k = 5\nconcurrency = 2\n", encoding="utf-8")
    env = {"ATOMCHAIN_SEED": "2", "ATOMCHAIN_MODEL_ID": "from-env"}
    cfg = load_config(f, {"seed": 3, "model_id": None}, env)
    assert (cfg.seed, cfg.model_id, cfg.top_k, cfg.concurrency) == (3, "from-env", 5, 2)


def test_value_coercion(tmp_path):
    f = tmp_path / "c.conf"
    f.write_text("recap-includes-history = yes\ntop_k = none\ntemperature = 0.3\n", encoding="utf-8")
    assert read_config_file(f) == {"recap_includes_history": True, "top_k": None, "temperature": 0.3}


@pytest.mark.parametrize("line", ["nonsense", "colour = red", "seed = many"])
def test_bad_files(tmp_path, line):
    f = tmp_path / "c.conf"
    f.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_config_file(f)


@pytest.mark.parametrize("kw", [{"backend": "cloud"}, {"concurrency": 0}, {"nei_policy": "skip"},
                                {"timeout": 0}])
def test_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_env_and_chain_config():
    assert env_overrides({"ATOMCHAIN_RETRIES": "5", "OTHER": "x"}) == {"retries": 5}
    chain = RunConfig(seed=4, row_convention="data", max_plans=3).chain_config()
    assert (chain.seed, chain.max_plans, chain.row_convention) == (4, 3, RowConvention.DATA)
