import pytest
import torch

from mitnet.checkpoint import load_checkpoint, save_checkpoint
from mitnet.config import ConfigError, RunConfig, load_config, parse_config_text, save_config
from mitnet.model import MITNet, build_variant


def test_text_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides(train={"epochs": 5}, model={"use_mic": False}, output={"dir": "x"})
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg


def test_hash_ignores_output_dir():
    a = RunConfig()
    assert a.hash() == a.with_overrides(output={"dir": "elsewhere"}).hash()
    assert a.hash() != a.with_overrides(optim={"lr": 1e-3}).hash()


def test_parse_comments_and_types():
    cfg = parse_config_text("# hi\noptim.lr = 1e-3  # inline\ntrain.augment = false\ndata.train = 'a b'\n")
    assert cfg.optim.lr == 1e-3 and cfg.train.augment is False and cfg.data.train == "a b"


@pytest.mark.parametrize("text, match", [
    ("model.nope = 1", "unknown config key"),
    ("bogus.key = 1", "unknown config section"),
    ("train.epochs = 1.5", "integer"),
    ("model.use_mic = 1", "true/false"),
    ("optim.lr = fast", "number"),
    ("train.epochs 3", "expected"),
    ("epochs = 3", "section.key"),
    ("train.epochs = 1\ntrain.epochs = 2", "duplicate"),
    ("model.stage_order = sideways", "invalid model"),
])
def test_bad_config(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_int_accepted_for_float():
    assert parse_config_text("optim.lr = 1").optim.lr == 1.0


def test_checkpoint_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides(model={"use_mic": False, "use_adfb": False, "use_triple_interaction": False})
    torch.manual_seed(0)
    model = MITNet(cfg.model)
    save_checkpoint(tmp_path / "a.pt", cfg, model, epoch=3, iteration=9)
    loaded_cfg, loaded, payload = load_checkpoint(tmp_path / "a.pt", expect_model=cfg.model)
    assert loaded_cfg == cfg and payload["epoch"] == 3 and payload["iteration"] == 9
    for (k, v), (_, w) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(v, w), k


def test_checkpoint_config_mismatch(tmp_path):
    cfg = RunConfig().with_overrides(model=build_variant("M1").to_dict())
    save_checkpoint(tmp_path / "a.pt", cfg, MITNet(cfg.model))
    with pytest.raises(ConfigError, match="differs"):
        load_checkpoint(tmp_path / "a.pt", expect_model=build_variant("M2"))


def test_not_a_checkpoint(tmp_path):
    torch.save({"weights": 1}, tmp_path / "junk.pt")
    with pytest.raises(ConfigError, match="not a"):
        load_checkpoint(tmp_path / "junk.pt")
