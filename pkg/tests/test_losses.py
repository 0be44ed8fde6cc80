import math

import numpy as np
import pytest

from lfrr import autodiff as ad
from lfrr.autodiff import Tensor
from lfrr.errors import ShapeMismatch
from lfrr.losses import (
    SSIM_C1,
    LossWeights,
    MetricReport,
    combine,
    gaussian_filter_matrix,
    loss_combined,
    loss_epi,
    loss_mae,
    loss_ssim,
    loss_stage,
    psnr_y,
    scene_metrics,
    ssim_map,
)
from lfrr.verify import gradcheck_case


def _pair(rng, shape=(2, 2, 8, 8, 3)):
    return Tensor(rng.uniform(0.05, 0.95, shape)), Tensor(rng.uniform(0.05, 0.95, shape))


def test_mae_examples(rng):
    a, _ = _pair(rng)
    assert float(loss_mae(a, a).data) == 0.0
    b = Tensor(np.clip(a.data, 0, 0.8))
    assert float(loss_mae(Tensor(b.data + 0.1), b).data) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        loss_mae(a, Tensor(np.zeros((2, 2, 8, 7, 3))))


def test_ssim_identity_and_constants(rng):
    a = rng.random((16, 16))
    assert np.allclose(ssim_map(a, a), 1.0)
    m = ssim_map(np.zeros((16, 16)), np.ones((16, 16)))
    assert np.allclose(m, SSIM_C1 / (1 + SSIM_C1), rtol=1e-12)
    p, _ = _pair(rng)
    assert float(loss_ssim(p, p).data) == pytest.approx(0.0, abs=1e-12)


def test_ssim_against_reference_implementation(rng):
    skimage = pytest.importorskip("skimage.metrics")
    a, b = rng.random((24, 20)), rng.random((24, 20))
    ref = skimage.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False, full=True)[1]
    # skimage pads by reflection too; interior agreement is exact up to rounding
    assert np.allclose(ssim_map(a, b)[5:-5, 5:-5], ref[5:-5, 5:-5], atol=1e-10)


def test_gaussian_matrix_rows_sum_to_one():
    m = gaussian_filter_matrix(16)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert gaussian_filter_matrix(1)[0, 0] == pytest.approx(1.0)


def test_epi_loss_properties(rng):
    p, g = _pair(rng, (3, 3, 8, 8, 3))
    assert float(loss_epi(g, g).data) == 0.0
    shifted = float(loss_epi(Tensor(p.data + 0.3), g).data)
    assert shifted == pytest.approx(float(loss_epi(p, g).data), abs=1e-12)
    assert float(loss_epi(p, g).data) > 0


def test_epi_loss_by_hand():
    pred = np.zeros((2, 1, 2, 1, 1))
    pred[1, 0, 1, 0, 0] = 1.0
    # e has forward differences |1| along u (one pair) and x (one pair); the
    # single-size axes v and y contribute nothing
    got = float(loss_epi(Tensor(pred), Tensor(np.zeros_like(pred))).data)
    assert got == pytest.approx(0.5 * (0.5 + 0.5))


def test_combined_weights(rng):
    assert float(combine(Tensor(0.2), Tensor(0.3), Tensor(0.05), LossWeights()).data) == pytest.approx(0.28)
    p, g = _pair(rng)
    zero = LossWeights(alpha=0.0, beta=0.0)
    assert float(loss_combined(p, g, zero).data) == float(loss_mae(p, g).data)
    assert float(loss_combined(g, g).data) == pytest.approx(0.0, abs=1e-12)
    w = LossWeights(alpha=0.3, beta=2.0)
    parts = (loss_mae(p, g), loss_ssim(p, g), loss_epi(p, g))
    assert float(loss_combined(p, g, w).data) == pytest.approx(
        float(parts[0].data) + 0.3 * float(parts[1].data) + 2.0 * float(parts[2].data), rel=1e-12)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)


def test_stage_losses(rng):
    p, g = _pair(rng)
    q, _ = _pair(rng)
    w = LossWeights()
    assert float(combine(Tensor(0.4), Tensor(0.0), Tensor(0.0), LossWeights(0, 0)).data
                 + w.lam * 0.2) == pytest.approx(0.5)
    l2 = float(loss_stage(2, p, q, g).data)
    assert l2 == float(loss_stage(2, Tensor(rng.random(p.shape)), q, g).data)
    assert float(loss_stage(1, q, q, g).data) == pytest.approx(1.5 * float(loss_combined(q, g).data))
    with pytest.raises(ValueError):
        loss_stage(3, p, q, g)


def test_stage_two_gradient_ignores_initial(rng):
    p, g = _pair(rng)
    q, _ = _pair(rng)
    p.requires_grad = q.requires_grad = True
    with ad.Tape() as tape:
        loss = loss_stage(2, p, q, g)
    tape.backward(loss)
    assert p.grad is None and q.grad is not None


def test_psnr_examples(rng):
    g = rng.uniform(0.2, 0.8, (2, 2, 4, 4, 3))
    assert psnr_y(g, g) == math.inf
    assert psnr_y(g + 0.1, g) == pytest.approx(20.0, abs=1e-9)
    assert psnr_y(g + 1 / 255, g) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert 20 * math.log10(255) == pytest.approx(48.13, abs=0.005)


def test_psnr_view_permutation_invariance(rng):
    g = rng.random((3, 3, 4, 4, 3))
    p = np.clip(g + rng.normal(0, 0.05, g.shape), 0, 1)
    perm = rng.permutation(9)
    gp = g.reshape(9, 4, 4, 3)[perm].reshape(g.shape)
    pp = p.reshape(9, 4, 4, 3)[perm].reshape(g.shape)
    assert psnr_y(pp, gp) == pytest.approx(psnr_y(p, g), rel=1e-12)


def test_masked_psnr(rng):
    g = rng.uniform(0.2, 0.8, (1, 1, 4, 4, 3))
    p = g.copy()
    p[0, 0, 0, 0] += 0.1
    mask = np.zeros((1, 1, 4, 4), bool)
    mask[0, 0, 0, 0] = True
    assert psnr_y(p, g, mask) == pytest.approx(20.0)
    assert math.isnan(psnr_y(p, g, np.zeros_like(mask)))


def test_metric_report(rng):
    g = rng.random((2, 2, 4, 4, 3))
    rep = MetricReport([scene_metrics("a", g, g)], [scene_metrics("a", np.clip(g + 0.1, 0, 1), g)])
    assert rep.mean_psnr == math.inf
    s = rep.summary()
    assert s["mean_psnr_y"] == "inf" and s["baseline_psnr_y"] < 30
    assert -1 <= rep.baseline_ssim <= 1
    assert [line["kind"] for line in rep.lines()] == ["model", "baseline", "summary"]


@pytest.mark.parametrize("name", ["loss_mae", "loss_ssim", "loss_epi"])
@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients(name, seed):
    rep = gradcheck_case(name, seed)
    assert rep.passed, rep


def test_mae_gradient_tight(rng):
    p, g = _pair(rng)
    rep = ad.grad_check(lambda x: loss_mae(x, g), [p])
    assert rep.max_rel_err <= 1e-6


def test_ssim_gradient_16x16(rng):
    p, g = _pair(rng, (1, 1, 16, 16, 1))
    rep = ad.grad_check(lambda x: loss_ssim(x, g), [p], tol=1e-4)
    assert rep.passed, rep


def test_epi_gradient_reference_shape(rng):
    p, g = _pair(rng, (3, 3, 8, 8, 3))
    rep = ad.grad_check(lambda x: loss_epi(x, g), [p])
    assert rep.passed, rep
