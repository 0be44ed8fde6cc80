"""Two-stage training loop, Adam, cosine learning-rate schedule and evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .errors import ConfigMismatch, EmptyDataset, InvalidConfig, NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from .lightfield import DIHEDRAL, apply_transform_array
from .losses import MetricReport, loss_parts, scene_metrics
from .network import Ablation, Model
from .synth import SynthPair

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def lr_schedule(it: int, total: int, lr0: float) -> float:
    """Cosine annealing from ``lr0`` at ``it = 0`` to 0 at ``it = total``."""
    if not 0 <= it <= total:
        raise ValueError(f"iteration {it} outside [0, {total}]")
    if it == total:
        return 0.0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * it / total))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_params, m_out, v_out = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(m_out, v_out, t)


@dataclass
class TrainResult:
    config: TrainConfig
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_val_psnr: float
    log: list[dict]
    wall_times: list[float]

    def model(self, best: bool = False) -> Model:
        return model_from_params(self.best_params if best else self.params, self.config)


def model_from_params(params: dict[str, np.ndarray], cfg: TrainConfig) -> Model:
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    return Model(cfg.model, cfg.ablation, tensors)


def sample_patch(pair: SynthPair, patch: int, rng: np.random.Generator):
    """Random crop shared by every view, then one of the eight dihedral transforms."""
    X, Y = pair.clean.shape[2:4]
    x0 = int(rng.integers(0, X - patch + 1))
    y0 = int(rng.integers(0, Y - patch + 1))
    t = DIHEDRAL[int(rng.integers(len(DIHEDRAL)))]
    window = (slice(None), slice(None), slice(x0, x0 + patch), slice(y0, y0 + patch))
    deg = apply_transform_array(pair.degraded.data[window], t)
    gt = apply_transform_array(pair.clean.data[window], t)
    return deg, gt


def _check_pairs(pairs):
    for p in pairs:
        if p.clean.C != 3:
            raise ConfigMismatch(f"{p.name}: model expects RGB light fields, got C={p.clean.C}")


def evaluate(model: Model, pairs: list[SynthPair]) -> MetricReport:
    """Full-frame luma PSNR/SSIM of the model and of the degraded input."""
    _check_pairs(pairs)
    report = MetricReport()
    for k, pair in enumerate(pairs):
        name = pair.name or f"scene_{k:03d}"
        pred = model.predict(pair.degraded)
        report.scenes.append(scene_metrics(name, pred.final, pair.clean, pair.occlusion_mask))
        report.baseline.append(scene_metrics(name, pair.degraded, pair.clean, pair.occlusion_mask))
    return report


def train(cfg: TrainConfig, train_pairs: list[SynthPair], val_pairs: list[SynthPair] = (),
          out_dir=None) -> TrainResult:
    """Optimise a fresh model; deterministic given ``cfg.seed`` and the data.

    Stage 1 (epochs before ``cfg.stage2_epoch``) supervises ``O_i`` and
    ``O_f``; stage 2 only ``O_f``.  The best validation checkpoint is kept
    alongside the final one.
    """
    if not train_pairs:
        raise EmptyDataset("no training scenes")
    _check_pairs(train_pairs)
    smallest = min(min(p.clean.X, p.clean.Y) for p in train_pairs)
    if cfg.patch > smallest:
        raise InvalidConfig(f"patch {cfg.patch} exceeds the smallest scene dimension {smallest}")
    val_pairs = list(val_pairs)
    out_dir = Path(out_dir) if out_dir is not None else None
    with ad.precision(cfg.precision):
        model = Model(cfg.model, cfg.ablation, seed=cfg.seed)
        params = {k: v.data for k, v in model.params.items()}
        state = AdamState()
        rng = np.random.default_rng(cfg.seed)
        total = cfg.epochs * len(train_pairs)
        records: list[dict] = []
        wall: list[float] = []
        best = (-math.inf, -1, params)
        it = 0
        start = time.perf_counter()
        for epoch in range(cfg.epochs):
            stage = 1 if epoch < cfg.stage2_epoch else 2
            order = rng.permutation(len(train_pairs))
            epoch_losses = []
            for scene in order:
                lr = lr_schedule(it, total, cfg.lr0)
                for p in model.params.values():
                    p.grad = None
                for _ in range(cfg.batch):
                    deg, gt = sample_patch(train_pairs[scene], cfg.patch, rng)
                    with Tape() as tape:
                        O_i, O_f = model.forward(Tensor(deg))
                        gt_t = Tensor(gt)
                        final = loss_parts(O_f, gt_t, cfg.weights)
                        loss = final.total
                        initial = None
                        if stage == 1:
                            initial = loss_parts(O_i, gt_t, cfg.weights)
                            loss = loss + ad.scale(initial.total, cfg.weights.lam)
                        if cfg.batch > 1:
                            loss = ad.scale(loss, 1.0 / cfg.batch)
                    if not np.isfinite(loss.data):
                        _dump_state(out_dir, params, cfg, it)
                        raise NonFiniteLoss(f"loss became {float(loss.data)} at iteration {it}")
                    tape.backward(loss)
                    parts = {"final": final.values(), "total": float(loss.data) * cfg.batch}
                    if initial is not None:
                        parts["initial"] = initial.values()
                grads = {k: p.grad for k, p in model.params.items()}
                params, state = adam_step(params, grads, state, lr)
                for k, p in model.params.items():
                    p.data = params[k]
                records.append({"kind": "iter", "iter": it, "epoch": epoch, "stage": stage,
                                "scene": int(scene), "lr": lr, **parts})
                epoch_losses.append(parts["total"])
                wall.append(time.perf_counter() - start)
                it += 1
            summary = {"kind": "epoch", "epoch": epoch, "stage": stage,
                       "mean_loss": float(np.mean(epoch_losses))}
            last = epoch == cfg.epochs - 1
            if val_pairs and cfg.val_every and ((epoch + 1) % cfg.val_every == 0 or last):
                report = evaluate(model, val_pairs)
                summary.update(val_psnr_y=report.mean_psnr, val_ssim_y=report.mean_ssim,
                               val_psnr_y_masked=report.mean_psnr_masked)
                if report.mean_psnr > best[0]:
                    best = (report.mean_psnr, epoch, {k: v.copy() for k, v in params.items()})
                log.info("epoch %d stage %d loss %.5f val psnr %.3f", epoch, stage,
                         summary["mean_loss"], report.mean_psnr)
            records.append(summary)
            if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.ckpt", params, cfg)
    best_psnr, best_epoch, best_params = best
    if best_epoch < 0:
        best_params = {k: v.copy() for k, v in params.items()}
    return TrainResult(cfg, params, best_params, best_epoch, best_psnr, records, wall)


def _dump_state(out_dir, params, cfg, it):
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    finite = {k: bool(np.all(np.isfinite(v))) for k, v in params.items()}
    (out_dir / "nonfinite_state.json").write_text(json.dumps({"iter": it, "finite_params": finite}, indent=1))


def write_log(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


ABLATIONS = {
    "full_4d": Ablation(),
    "angular_only": Ablation(resample="angular_only"),
    "spatial_only": Ablation(resample="spatial_only"),
    "no_refine": Ablation(refine="none"),
}


def ablation_sweep(base: TrainConfig, train_pairs, val_pairs, seeds, variants=None) -> dict[str, list[float]]:
    """Final validation PSNR-Y per variant and seed; every run gets ``base``'s budget."""
    variants = ABLATIONS if variants is None else variants
    out: dict[str, list[float]] = {}
    for name, abl in variants.items():
        scores = []
        for seed in seeds:
            cfg = replace(base, ablation=abl, seed=int(seed), val_every=0)
            res = train(cfg, train_pairs)
            with ad.precision(cfg.precision):
                scores.append(evaluate(res.model(), val_pairs).mean_psnr)
            log.info("ablation %s seed %d: %.3f dB", name, seed, scores[-1])
        out[name] = scores
    return out
