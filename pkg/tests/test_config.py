from dataclasses import fields, replace

import pytest

from fedmae.config import (RunConfig, build_scenario, config_from_text, config_to_text,
                           load_config, save_config)
from fedmae.errors import ConfigError, NotFoundError


def test_defaults_roundtrip(tmp_path):
    cfg = RunConfig()
    save_config(tmp_path / "c.cfg", cfg)
    assert load_config(tmp_path / "c.cfg") == cfg


def test_every_field_roundtrips():
    cfg = RunConfig(seed=9, strategy="fedadam", server_lr=0.003, literal_signs=True, eps=1e-7,
                    split="homogeneous", weighting="uniform", probe_classifier="mlp")
    back = config_from_text(config_to_text(cfg))
    assert back == cfg
    assert {f.name for f in fields(RunConfig)} <= set(
        line.split(" = ")[0] for line in config_to_text(cfg).splitlines()[1:])


def test_partial_file_uses_defaults_and_overrides():
    cfg = config_from_text("[run]\nrounds = 7\nseed = 3\n", seed=11)
    assert cfg.rounds == 7 and cfg.seed == 11 and cfg.lr == RunConfig().lr
    assert config_from_text("").rounds == RunConfig().rounds


@pytest.mark.parametrize("text", [
    "[run]\nbogus = 1\n",
    "[other]\nrounds = 1\n",
    "[run]\nrounds = many\n",
    "[run]\nliteral_signs = maybe\n",
    "[run]\nschema_version = 2\n",
    "[run]\nstrategy = fedsgd\n",
    "[run]\nkind = middle\n",
    "rounds = 3\n",
])
def test_rejects_bad_documents(text):
    with pytest.raises(ConfigError):
        config_from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(NotFoundError):
        load_config(tmp_path / "missing.cfg")


def test_server_lr_blank_means_default():
    cfg = config_from_text("[run]\nstrategy = fedadagrad\nserver_lr =\n")
    assert cfg.server_lr is None and cfg.strategy_obj().server_lr == 1e-2


def test_default_scenario_shape():
    sc = build_scenario(RunConfig())
    assert sc.federation.num_nodes == 6
    assert len(sc.pretrain) == 2400
    assert sc.split.counts() == {0: 150, 1: 350, 2: 350, 3: 350, 4: 600, 5: 600}
    assert {s.domain for s in sc.shards[4]} == {"B"}
    assert {s.domain for k in (0, 1, 2, 3) for s in sc.shards[k]} == {"A"}
    ids = {s.sample_id for s in sc.pretrain}
    assert ids.isdisjoint(s.sample_id for s in sc.probe_set)


def test_manifest_split(tmp_path):
    base = RunConfig(split="homogeneous", classes=2, per_class=10, server_size=4, per_client=3)
    sc = build_scenario(base)
    path = tmp_path / "split.txt"
    path.write_text(sc.split.to_manifest())
    again = build_scenario(replace(base, split="manifest", split_manifest=str(path)))
    assert again.split.counts() == sc.split.counts() == {0: 4, 1: 3, 2: 3, 3: 3, 4: 3, 5: 3}
