import json

import pytest

from mlvc import config
from mlvc.data.transforms import AugmentConfig
from mlvc.vit import ConfigError


class TestResolve:
    def test_defaults_materialized(self, tmp_path):
        cfg = config.resolve({}, base_dir=tmp_path)
        d = cfg.to_dict()
        assert d["seed"] == 0
        assert d["model"]["kind"] == "image" and d["model"]["vit"]["dim"] == 64
        assert d["train"]["lr"] == 0.001 and d["train"]["seed"] == 0
        assert d["data"]["annotations"] == str(tmp_path / "." / "annotations.csv")
        assert d["data"]["normalization"] == "liaci" and d["data"]["augment"] is False
        assert d["init"] == {"checkpoint": None, "spatial_checkpoint": None}

    def test_resolved_copy_is_a_fixed_point(self, tmp_path):
        raw = {"seed": 4, "model": {"kind": "video", "video": {"pool_tt": "avg"}},
               "train": {"scheduler": {"name": "plateau"}}, "data": {"root": "d", "augment": {"flip_p": 1.0}}}
        first = config.resolve(raw, base_dir=tmp_path)
        second = config.resolve(json.loads(json.dumps(first.to_dict())))
        assert second.to_dict() == first.to_dict()
        assert second.hash() == first.hash()

    @pytest.mark.parametrize("raw", [
        {"sed": 1},
        {"train": {"learning_rate": 0.1}},
        {"data": {"rooot": "."}},
        {"data": {"augment": {"flip": 0.5}}},
        {"init": {"ckpt": "x"}},
        {"model": {"kind": "image", "vit": {"width": 3}}},
        {"model": {"kind": "audio"}},
        {"data": {"normalization": "imagenet"}},
        {"data": {"augment": "yes"}},
    ])
    def test_unknown_or_invalid_rejected(self, raw):
        with pytest.raises(ConfigError):
            config.resolve(raw)

    def test_seed_flows_into_training(self):
        cfg = config.resolve({"seed": 9})
        assert cfg.train.seed == 9
        assert config.resolve({"seed": 9}, seed_override=2).train.seed == 2

    def test_augment_variants(self):
        assert config.resolve({"data": {"augment": True}}).augment_config == AugmentConfig()
        assert config.resolve({}).augment_config is None
        aug = config.resolve({"data": {"augment": {"blur_p": 0.0}}}).augment_config
        assert aug.blur_p == 0.0 and aug.blur_kernel == (5, 9)

    def test_custom_normalization(self):
        cfg = config.resolve({"data": {"normalization": {"mean": [0.5] * 3, "std": [0.2] * 3}}})
        assert cfg.mean_std == ((0.5,) * 3, (0.2,) * 3)

    def test_hash_changes_with_content(self):
        assert config.resolve({"seed": 1}).hash() != config.resolve({"seed": 2}).hash()


class TestLoad:
    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            config.load(tmp_path / "none.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{bad")
        with pytest.raises(ConfigError, match="line 1"):
            config.load(p)

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "sub").mkdir()
        p = tmp_path / "sub" / "c.json"
        p.write_text(json.dumps({"data": {"root": "data"}, "init": {"checkpoint": "w.ckpt"}}))
        cfg = config.load(p)
        assert cfg.data["root"] == str(tmp_path / "sub" / "data")
        assert cfg.init["checkpoint"] == str(tmp_path / "sub" / "w.ckpt")


class TestEnvSeed:
    def test_unset(self, monkeypatch):
        monkeypatch.delenv(config.SEED_ENV, raising=False)
        assert config.env_seed() is None

    def test_value(self, monkeypatch):
        monkeypatch.setenv(config.SEED_ENV, "17")
        assert config.env_seed() == 17

    def test_garbage(self, monkeypatch):
        monkeypatch.setenv(config.SEED_ENV, "abc")
        with pytest.raises(ConfigError):
            config.env_seed()
