import pytest

from lfrr.config import TrainConfig, apply_overrides, format_config, parse_config, to_flat
from lfrr.errors import InvalidConfig


def test_round_trip_default():
    cfg = TrainConfig()
    assert parse_config(format_config(cfg)) == cfg


def test_round_trip_modified():
    cfg = apply_overrides(TrainConfig(), ["model.c=8", "loss.lambda=0.25", "ablation.resample=angular_only",
                                          "train.lr0=1e-3", "train.precision=f32", "train.epochs=7"])
    assert cfg.model.c == 8 and cfg.weights.lam == 0.25 and cfg.ablation.resample == "angular_only"
    assert cfg.lr0 == 1e-3 and cfg.epochs == 7
    assert parse_config(format_config(cfg)) == cfg


def test_comments_and_later_wins():
    cfg = parse_config("# header\n\ntrain.epochs=4  # inline\ntrain.epochs=9\n")
    assert cfg.epochs == 9


def test_keys_are_complete():
    flat = to_flat(TrainConfig())
    for key in ("model.M", "model.N", "model.c", "model.r", "loss.alpha", "loss.beta", "loss.lambda",
                "ablation.resample", "ablation.refine", "train.seed", "train.stage2_start"):
        assert key in flat


@pytest.mark.parametrize("line", ["model.width=3", "train.epochs", "optim.lr=1", "train.epochs=many",
                                  "train.precision=f16", "train.lr0=-1", "ablation.resample=bogus",
                                  "train.stage2_start=0", "model.c=0"])
def test_invalid(line):
    with pytest.raises(InvalidConfig):
        apply_overrides(TrainConfig(), [line])


def test_stage_switch_epoch():
    assert TrainConfig(epochs=300).stage2_epoch == 225
    assert TrainConfig(epochs=4).stage2_epoch == 3
    assert TrainConfig(epochs=4, stage2_start=1.0).stage2_epoch == 4
