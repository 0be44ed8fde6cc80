import math

import numpy as np
import pytest

import lfrr.train as train_mod
from lfrr.checkpoint import load_checkpoint, save_checkpoint
from lfrr.config import TrainConfig, apply_overrides
from lfrr.errors import ConfigMismatch, EmptyDataset, InvalidConfig, NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from lfrr.lightfield import LightField
from lfrr.network import Model, ModelConfig
from lfrr.synth import SynthPair, make_dataset
from lfrr.train import AdamState, adam_step, evaluate, lr_schedule, sample_patch, train

TINY = apply_overrides(TrainConfig(), ["model.M=1", "model.N=1", "model.c=4", "model.r=2",
                                       "train.patch=8", "train.epochs=2", "train.lr0=1e-3"])


@pytest.fixture(scope="module")
def scenes():
    return make_dataset(3, dims=(3, 3, 12, 12), seed=1)


def test_lr_schedule():
    assert lr_schedule(0, 100, 3e-4) == 3e-4
    assert lr_schedule(100, 100, 3e-4) == 0.0
    assert lr_schedule(50, 100, 3e-4) == pytest.approx(1.5e-4, rel=1e-12)
    lrs = [lr_schedule(i, 37, 1.0) for i in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        lr_schedule(101, 100, 1.0)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState({"w": np.array([0.5, 0.5])}, {"w": np.array([0.1, 0.1])}, 3)
    new, st = adam_step(p, {"w": np.zeros(2)}, state, 0.1)
    assert np.allclose(new["w"], p["w"] - 0.1 * (0.45 / (1 - 0.9**4)) / (np.sqrt(0.0999 / (1 - 0.999**4)) + 1e-8))
    assert np.allclose(st.m["w"], 0.45) and np.allclose(st.v["w"], 0.0999)
    fresh, st0 = adam_step(p, {}, AdamState(), 0.1)
    assert np.array_equal(fresh["w"], p["w"]) and st0.t == 1


def test_adam_first_step_is_sign():
    p = {"w": np.zeros(3)}
    new, _ = adam_step(p, {"w": np.array([3.0, -0.01, 1e3])}, AdamState(), 0.01)
    assert np.allclose(new["w"], [-0.01, 0.01, -0.01], rtol=1e-5)


def test_adam_constant_gradient_fixed_point():
    p = {"w": np.zeros(2)}
    state = AdamState()
    for _ in range(2000):
        prev = p["w"]
        p, state = adam_step(p, {"w": np.array([0.3, -7.0])}, state, 1e-3)
    assert np.allclose(p["w"] - prev, [-1e-3, 1e-3], rtol=1e-6)


def test_adam_errors():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)
    with pytest.raises(NonFiniteGradient):
        adam_step({"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])}, AdamState(), 0.1)


def test_sample_patch_shape(scenes):
    deg, gt = sample_patch(scenes[0], 8, np.random.default_rng(0))
    assert deg.shape == gt.shape == (3, 3, 8, 8, 3)


def test_one_epoch_bookkeeping(scenes, tmp_path):
    cfg = apply_overrides(TINY, ["train.epochs=1"])
    res = train(cfg, scenes[:1], out_dir=tmp_path)
    iters = [r for r in res.log if r["kind"] == "iter"]
    assert len(iters) == 1
    save_checkpoint(tmp_path / "final.ckpt", res.params, cfg)
    params, back = load_checkpoint(tmp_path / "final.ckpt")
    assert back == cfg and set(params) == set(res.params)


def test_replay_bit_identical(scenes):
    a = train(TINY, scenes[:2], scenes[2:])
    b = train(TINY, scenes[:2], scenes[2:])
    assert a.log == b.log
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert len([r for r in a.log if r["kind"] == "iter"]) == 4


def test_stage_switch_in_log(scenes):
    cfg = apply_overrides(TINY, ["train.epochs=4"])
    res = train(cfg, scenes[:1])
    iters = [r for r in res.log if r["kind"] == "iter"]
    assert [r["stage"] for r in iters] == [1, 1, 1, 2]
    assert "initial" in iters[0] and "initial" not in iters[-1]
    assert iters[-1]["lr"] == lr_schedule(3, 4, cfg.lr0)
    r = iters[0]
    lam = cfg.weights.lam
    assert r["total"] == pytest.approx(r["final"]["total"] + lam * r["initial"]["total"], rel=1e-12)


def test_training_reduces_loss(scenes):
    cfg = apply_overrides(TINY, ["train.epochs=6", "train.lr0=3e-3"])
    res = train(cfg, scenes[:1])
    totals = [r["final"]["total"] for r in res.log if r["kind"] == "iter"]
    assert min(totals[3:]) < totals[0]


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train(TINY, [])


def test_patch_too_large(scenes):
    with pytest.raises(InvalidConfig):
        train(apply_overrides(TINY, ["train.patch=13"]), scenes[:1])


def test_non_finite_loss_aborts(scenes, tmp_path, monkeypatch):
    real = train_mod.loss_parts

    def poisoned(pred, gt, weights):
        parts = real(pred, gt, weights)
        parts.total.data = np.array(np.nan)
        return parts

    monkeypatch.setattr(train_mod, "loss_parts", poisoned)
    with pytest.raises(NonFiniteLoss):
        train(apply_overrides(TINY, ["train.checkpoint_every=1"]), scenes[:1], out_dir=tmp_path)
    assert (tmp_path / "nonfinite_state.json").exists()
    assert not list(tmp_path.glob("*.ckpt"))


def test_untrained_model_matches_baseline(scenes):
    rep = evaluate(Model(TINY.model, seed=0), scenes)
    for m, b in zip(rep.scenes, rep.baseline):
        assert m.psnr == b.psnr and m.ssim == b.ssim and m.psnr_views == b.psnr_views
    clean = [SynthPair(p.clean, p.clean, p.occlusion_mask, p.spec) for p in scenes]
    assert evaluate(Model(TINY.model), clean).mean_psnr == math.inf


def test_evaluate_rejects_non_rgb(scenes):
    p = scenes[0]
    grey = LightField(p.clean.data[..., :1])
    with pytest.raises(ConfigMismatch):
        evaluate(Model(ModelConfig(M=1, N=1, c=4, r=2)), [SynthPair(grey, grey, p.occlusion_mask, p.spec)])
