import pytest

from semicycle import config
from semicycle.errors import ConfigError
from semicycle.stego import StegoConfig
from semicycle.trainer import TrainConfig


def test_round_trip_defaults(tmp_path):
    for cls in (TrainConfig, StegoConfig):
        cfg = cls()
        config.save(cfg, tmp_path / "c.cfg")
        assert config.load(tmp_path / "c.cfg", cls) == cfg


def test_parse_types_and_comments():
    cfg = config.loads("# header\nsigma = 10  # trailing\nloss_levels = 3, 4\ndouble = true\nepochs=4\n"
                       "decay_start = 2\nbetas = 0.5,0.9\n", TrainConfig)
    assert cfg.sigma == 10.0 and cfg.loss_levels == (3, 4) and cfg.double is True
    assert cfg.epochs == 4 and cfg.betas == (0.5, 0.9)


def test_base_overrides():
    base = TrainConfig(k=1)
    assert config.loads("n = 2", TrainConfig, base).k == 1


@pytest.mark.parametrize("text", ["bogus = 1", "k = 1\nk = 2", "k 3", "k = three", "double = maybe",
                                  "batch_size = 0"])
def test_errors(text):
    with pytest.raises(ConfigError):
        config.loads(text, TrainConfig)
