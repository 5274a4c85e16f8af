from pathlib import Path

import pytest

from acoustic_ssm.config import RunConfig, apply_overrides, describe_keys, dumps, load_config
from acoustic_ssm.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    c = RunConfig()
    assert (c.data.sample_rate, c.data.clip_len) == (20000, 30225)
    assert (c.features.n_fft, c.features.hop, c.features.n_mels) == (510, 128, 256)
    assert (c.model.N, c.model.ssm_layers, c.model.ssm_enabled) == (64, 6, True)
    assert (c.contrastive.batch, c.contrastive.epochs, c.contrastive.lr) == (32, 500, 1e-4)
    f = c.fewshot
    assert (f.n_way, f.shots, f.ft_lr, f.ft_epochs, f.freeze_embedder) == (5, 5, 0.006, 50, False)
    assert c.seed == 0


def test_load_and_override(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 4\n[contrastive]\nmethod = "augmentations"\nbatch = 8\n')
    c = load_config(p)
    assert (c.seed, c.contrastive.method, c.contrastive.batch) == (4, "augmentations", 8)
    c2 = apply_overrides(c, ["contrastive.batch=16", "model.ssm_enabled=false", "seed=9"])
    assert (c2.contrastive.batch, c2.model.ssm_enabled, c2.seed) == (16, False, 9)
    assert c.contrastive.batch == 8  # original untouched


def test_unknown_key_names_key_and_line(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[model]\nN = 16\nwidht = 3\n")
    with pytest.raises(ConfigError, match=r"model\.widht.*line 3"):
        load_config(p)


def test_unknown_section(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[modle]\nN = 1\n")
    with pytest.raises(ConfigError, match="modle"):
        load_config(p)


def test_type_errors():
    with pytest.raises(ConfigError, match="integer"):
        apply_overrides(RunConfig(), ["contrastive.batch=1.5"])
    with pytest.raises(ConfigError, match="boolean"):
        apply_overrides(RunConfig(), ["model.ssm_enabled=maybe"])
    with pytest.raises(ConfigError, match="method"):
        apply_overrides(RunConfig(), ["contrastive.method=mixup"])


def test_invalid_feature_grid():
    with pytest.raises(ConfigError, match="n_mels"):
        apply_overrides(RunConfig(), ["features.n_mels=128"])


def test_dumps_roundtrip(tmp_path):
    c = apply_overrides(RunConfig(), ["data.manifest=a b/m.csv", "augment.mask_frac=[0.0, 0.2]",
                                      "seed=3"])
    p = tmp_path / "c.toml"
    p.write_text(dumps(c))
    assert load_config(p) == c


def test_describe_keys_lists_everything():
    text = describe_keys()
    for key in ("data.manifest", "features.n_fft", "model.N", "model.ssm_enabled",
                "contrastive.method", "fewshot.freeze_embedder", "augment.pitch_semitones"):
        assert key in text


@pytest.mark.parametrize("name", ["desk.toml", "esc50_recipe.toml"])
def test_shipped_configs_load(name):
    load_config(CONFIGS / name)


def test_recipe_matches_full_protocol():
    c = load_config(CONFIGS / "esc50_recipe.toml")
    assert (c.data.sample_rate, c.data.clip_len) == (20000, 30225)
    assert (c.contrastive.lr, c.contrastive.epochs) == (1e-4, 500)
    assert (c.fewshot.ft_lr, c.fewshot.ft_epochs) == (0.006, 50)
