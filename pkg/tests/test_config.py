import pytest

from garment_nerf.config import RunConfig, config_from_dict, dump_config, load_config
from garment_nerf.errors import ConfigurationError


def test_defaults_are_desk_scale():
    cfg = config_from_dict({})
    assert cfg.scale == "desk"
    assert cfg.scene.image_size == 128 and cfg.model.uv_resolution == 64 and cfg.model.image_size == 128
    assert cfg.scene.n_cameras == 16 and cfg.scene.n_train_frames == 200


def test_full_scale_overrides_then_document_values():
    cfg = config_from_dict({"scale": "full", "train": {"iterations": 10}})
    assert cfg.model.image_size == 512 and cfg.model.uv_resolution == 128 and cfg.scene.image_size == 512
    assert cfg.train.iterations == 10


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"model": {"nope": 3}},
    {"scale": "huge"},
    {"model": 5},
    {"train": {"batch_size": 4}},
])
def test_rejects_bad_documents(doc):
    with pytest.raises(ConfigurationError):
        config_from_dict(doc)


def test_yaml_round_trip_and_hash(tmp_path):
    cfg = config_from_dict({"model": {"k": 1}, "ablation": {"views": [2, 4]}, "eval": {"cameras": [0, 3]}})
    assert cfg.ablation.views == (2, 4) and cfg.eval.cameras == (0, 3)
    dump_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again.to_dict() == cfg.to_dict()
    assert again.hash == cfg.hash
    assert config_from_dict({"model": {"k": 2}}).hash != cfg.hash


def test_unreadable_or_invalid_yaml(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("model: [unclosed")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.yaml")


def test_empty_document_is_default(tmp_path):
    (tmp_path / "empty.yaml").write_text("")
    assert load_config(tmp_path / "empty.yaml").to_dict() == RunConfig().to_dict()
