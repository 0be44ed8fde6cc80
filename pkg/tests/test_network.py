import numpy as np
import pytest

from lfrr import autodiff as ad
from lfrr.autodiff import Tensor
from lfrr.errors import ShapeMismatch
from lfrr.lightfield import LightField
from lfrr.network import (
    Ablation,
    Model,
    ModelConfig,
    closed_form_parameter_count,
    dgeb_forward,
    init_params,
    mdfb_forward,
    model_forward,
    parameter_count,
    parameter_shapes,
    rm_forward,
    rsm_forward,
    seb_forward,
)
from lfrr.verify import gradcheck_case

SMALL = ModelConfig(M=1, N=1, c=8, r=4)


def _randomised(params, rng, scale=0.2):
    for p in params.values():
        p.data = rng.uniform(-scale, scale, p.shape)
    return params


def test_mdfb_zero_params_is_identity(rng):
    params = {k: Tensor(np.zeros(v.shape)) for k, v in init_params(SMALL).items()}
    F = Tensor(rng.standard_normal((2, 2, 4, 4, 8)))
    assert np.array_equal(mdfb_forward(F, params, "rsm.mdfb.0").data, F.data)


def test_block_shape_contracts(rng):
    cfg = ModelConfig(M=1, N=1, c=32, r=16)
    params = init_params(cfg)
    F = Tensor(rng.standard_normal((3, 3, 16, 16, 32)))
    assert mdfb_forward(F, params, "rsm.mdfb.0").shape == F.shape
    E_I, E_O = dgeb_forward(F, F, params, "rm.block.0", cfg)
    assert E_I.shape == E_O.shape == F.shape
    with pytest.raises(ShapeMismatch):
        mdfb_forward(Tensor(np.zeros((1, 1, 2, 2, 16))), params, "rsm.mdfb.0")
    with pytest.raises(ShapeMismatch):
        dgeb_forward(F, Tensor(np.zeros((3, 3, 16, 15, 32))), params, "rm.block.0", cfg)


def test_mdfb_parameter_count_c64():
    shapes = dict(parameter_shapes(ModelConfig(M=1, N=0, c=64)))
    n = sum(int(np.prod(s)) for k, s in shapes.items() if k.startswith("rsm.mdfb.0."))
    assert n == 4 * (3 * 3 * 64 * 16 + 16) + (64 * 64 + 64) == 41_088


def test_full_configuration_parameter_budget():
    cfg = ModelConfig(M=5, N=5, c=64, r=16)
    enumerated = parameter_count(init_params(cfg))
    # lift, 5 MDFB, offset head, shared init conv, 5 DGEB, SEB, residual head
    by_hand = 1792 + 5 * 41_088 + 36_928 + 2308 + 1792 + 5 * (41_088 + 130) + 2184 + 73_792 + 1731
    assert enumerated == closed_form_parameter_count(cfg) == by_hand == 532_057
    assert 300_000 <= enumerated <= 600_000


@pytest.mark.parametrize("cfg", [ModelConfig(M=2, N=3, c=16, r=16), ModelConfig(M=0, N=1, c=8, r=2)])
@pytest.mark.parametrize("refine", ["dgeb", "mdfb", "none"])
def test_closed_form_matches_enumeration(cfg, refine):
    abl = Ablation(refine=refine)
    assert parameter_count(init_params(cfg, abl)) == closed_form_parameter_count(cfg, abl)


def test_dgeb_equal_inputs_reduce_to_encoding(rng):
    params = init_params(SMALL)
    F = Tensor(rng.standard_normal((2, 2, 4, 4, 8)))
    E = mdfb_forward(F, params, "rm.block.0.mdfb")
    E_I, E_O = dgeb_forward(F, F, params, "rm.block.0", SMALL)
    assert np.array_equal(E_I.data, E.data) and np.array_equal(E_O.data, E.data)


def test_dgeb_pair_swap(rng):
    params = _randomised(init_params(SMALL), rng)
    swapped = dict(params)
    for a, b in (("att_i", "att_o"), ("att_o", "att_i")):
        swapped[f"rm.block.0.{a}.weight"] = Tensor(-params[f"rm.block.0.{b}.weight"].data)
        swapped[f"rm.block.0.{a}.bias"] = params[f"rm.block.0.{b}.bias"]
    F_I, F_O = Tensor(rng.standard_normal((2, 2, 4, 4, 8))), Tensor(rng.standard_normal((2, 2, 4, 4, 8)))
    A, B = dgeb_forward(F_I, F_O, params, "rm.block.0", SMALL)
    B2, A2 = dgeb_forward(F_O, F_I, swapped, "rm.block.0", SMALL)
    assert np.array_equal(A.data, A2.data) and np.array_equal(B.data, B2.data)


def test_seb_zero_weights_halves(rng):
    params = {k: Tensor(np.zeros(v.shape)) for k, v in init_params(SMALL).items()}
    F = Tensor(rng.standard_normal((2, 2, 3, 3, 16)))
    assert np.array_equal(seb_forward(F, params, "rm.seb").data, 0.5 * F.data)
    with pytest.raises(ShapeMismatch):
        seb_forward(Tensor(np.zeros((1, 1, 2, 2, 8))), params, "rm.seb")


def test_seb_scales_per_view(rng):
    params = _randomised(init_params(SMALL), rng, 1.0)
    F = Tensor(rng.uniform(0.5, 1.0, (2, 1, 3, 3, 16)))
    F.data[1] *= 3.0
    out = seb_forward(F, params, "rm.seb").data
    s0 = out[0] / F.data[0]
    s1 = out[1] / F.data[1]
    # one scale per (view, channel), constant across the spatial grid
    assert np.allclose(s0, s0[:1, :1]) and np.allclose(s1, s1[:1, :1])
    assert not np.allclose(s0[0, 0, 0], s1[0, 0, 0])


def test_untrained_model_is_identity(rng):
    I = Tensor(rng.random((3, 3, 8, 8, 3)))
    O_i, O_f = model_forward(I, init_params(SMALL, seed=3), SMALL)
    assert np.array_equal(O_i.data, I.data) and np.array_equal(O_f.data, I.data)
    pred = Model(SMALL, seed=5).predict(LightField(I.data))
    assert np.array_equal(pred.final.data, I.data)
    assert not pred.residual.data.any()


def test_paper_scale_shape_contract(rng):
    cfg = ModelConfig(M=1, N=1, c=4, r=2)
    I = Tensor(rng.random((7, 7, 96, 96, 3)))
    O_i, O_f = model_forward(I, init_params(cfg), cfg)
    assert O_i.shape == O_f.shape == I.shape


def test_ablation_none_passes_input_through(rng):
    params = _randomised(init_params(SMALL), rng)
    I = Tensor(rng.random((2, 2, 5, 5, 3)))
    O_i, _, dP = rsm_forward(I, params, SMALL, Ablation(resample="none"))
    assert np.array_equal(O_i.data, I.data) and not dP.data.any()
    R = rm_forward(I, O_i, params, SMALL, Ablation(refine="none"))
    assert not R.data.any()
    with pytest.raises(ValueError):
        Ablation("none", "none")
    with pytest.raises(ShapeMismatch):
        rsm_forward(Tensor(np.zeros((2, 2, 3, 3, 1))), params, SMALL)


@pytest.mark.parametrize("mode,free", [("spatial_only", (2, 3)), ("angular_only", (0, 1))])
def test_ablation_masks_positions(rng, mode, free):
    params = _randomised(init_params(SMALL), rng, 0.5)
    I = Tensor(rng.random((3, 3, 6, 6, 3)))
    _, P, _ = rsm_forward(I, params, SMALL, Ablation(resample=mode))
    fixed = [a for a in range(4) if a not in free]
    assert np.array_equal(P.data[..., fixed], np.round(P.data[..., fixed]))
    assert not np.array_equal(P.data[..., list(free)], np.round(P.data[..., list(free)]))


def test_offset_head_learns_from_zero_init(rng):
    # the zero-initialised head must still receive gradient at the identity
    params = init_params(SMALL, seed=1)
    I = Tensor(rng.random((3, 3, 6, 6, 3)))
    gt = Tensor(rng.random(I.shape))
    with ad.Tape() as tape:
        O_i, _ = model_forward(I, params, SMALL)
        loss = ad.reduce_mean(ad.absolute(O_i - gt))
    tape.backward(loss)
    assert np.abs(params["rsm.offset.1.weight"].grad).max() > 0


@pytest.mark.parametrize("name", ["mdfb", "dgeb", "dgeb.features", "seb", "model_end_to_end"])
@pytest.mark.parametrize("seed", range(3))
def test_block_gradients(name, seed):
    rep = gradcheck_case(name, seed)
    assert rep.passed, rep


def test_model_describe_and_count():
    m = Model(SMALL)
    assert m.parameter_count() == closed_form_parameter_count(SMALL)
    assert m.describe()["model"]["c"] == 8
