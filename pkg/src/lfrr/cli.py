"""Command-line entry point: ``lfrr {synth,train,eval,run,gradcheck,selftest}``.

Exit codes: 0 success, 2 invalid configuration, 3 I/O error, 4 a
verification property failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, apply_overrides, format_config
from .errors import (
    BadMagic,
    BadVersion,
    ConfigMismatch,
    DimensionOverflow,
    EmptyDataset,
    InvalidConfig,
    TruncatedFile,
)
from .lfio import quantize8, read_lfd, read_mosaic_png, write_lfd, write_mosaic_png, write_png
from .lightfield import LightField, extract_epi
from .losses import scene_metrics
from .synth import make_dataset, read_split, train_count, write_dataset
from .train import evaluate, model_from_params, train, write_log
from .verify import all_passed, gradcheck_suite, property_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERIFY = 4

RESOLVED_CONFIG = "resolved_config.txt"

log = logging.getLogger("lfrr")


class UsageError(Exception):
    """Bad flag values; reported as an invalid configuration."""


def _int_tuple(text: str, n: int, flag: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{flag} expects {n} comma-separated integers, got {text!r}") from None
    if len(values) != n or min(values) < 1:
        raise UsageError(f"{flag} expects {n} positive integers, got {text!r}")
    return values


def _write_resolved(out: Path, lines: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text("\n".join(lines) + "\n")


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.scenes < 1:
        raise InvalidConfig(f"--scenes must be >= 1, got {args.scenes}")
    dims = _int_tuple(args.dims, 4, "--dims")
    out = Path(args.out)
    pairs = make_dataset(args.scenes, dims=dims, seed=args.seed)
    write_dataset(out, pairs, seed=args.seed)
    _write_resolved(out, ["# resolved lfrr synth configuration", f"synth.scenes={args.scenes}",
                          f"synth.dims={','.join(map(str, dims))}", f"synth.seed={args.seed}"])
    n_train = train_count(len(pairs))
    print(f"wrote {len(pairs)} scenes to {out}: {n_train} train, {len(pairs) - n_train} validation")
    return EXIT_OK


def load_config(path, overrides) -> TrainConfig:
    lines = Path(path).read_text().splitlines() if path else []
    return apply_overrides(TrainConfig(), lines + list(overrides))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    train_pairs, val_pairs = read_split(args.data)
    if not train_pairs:
        raise EmptyDataset(f"{args.data} has no training scenes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(format_config(cfg))
    result = train(cfg, train_pairs, val_pairs, out_dir=out)
    save_checkpoint(out / "final.ckpt", result.params, cfg)
    save_checkpoint(out / "best.ckpt", result.best_params, cfg)
    write_log(out / "train_log.jsonl", result.log)
    # wall-clock times vary run to run, so they live outside the log
    with open(out / "timing.jsonl", "w") as fh:
        for it, t in enumerate(result.wall_times):
            fh.write(json.dumps({"iter": it, "wall_time": t}) + "\n")
    epochs = [r for r in result.log if r["kind"] == "epoch" and "val_psnr_y" in r]
    if epochs:
        last = epochs[-1]
        print(f"final validation PSNR-Y {last['val_psnr_y']:.3f} dB; best {result.best_val_psnr:.3f} dB "
              f"at epoch {result.best_epoch}")
    print(f"checkpoints written to {out}")
    return EXIT_OK


def _load_model(path):
    params, cfg = load_checkpoint(path)
    return model_from_params(params, cfg), cfg


def cmd_eval(args) -> int:
    model, cfg = _load_model(args.ckpt)
    train_pairs, val_pairs = read_split(args.data)
    pairs = {"val": val_pairs, "train": train_pairs, "all": train_pairs + val_pairs}[args.split]
    if not pairs:
        raise EmptyDataset(f"{args.data} has no {args.split} scenes")
    with ad.precision(cfg.precision):
        report = evaluate(model, pairs)
    for line in report.lines():
        print(json.dumps(line, sort_keys=True))
    return EXIT_OK


def _read_input(path: Path, views) -> LightField:
    if path.suffix.lower() == ".png":
        return read_mosaic_png(path, *views)
    return read_lfd(path)


def _epi_strip(lfs, orientation: str, a: int, b: int) -> np.ndarray:
    """Input, O_i and O_f EPIs stacked with one-pixel white separators."""
    planes = [extract_epi(lf, orientation, a, b).plane for lf in lfs]
    gap = np.ones((1,) + planes[0].shape[1:])
    rows = []
    for k, p in enumerate(planes):
        if k:
            rows.append(gap)
        rows.append(p)
    return np.concatenate(rows, axis=0)


def cmd_run(args) -> int:
    model, cfg = _load_model(args.ckpt)
    lf = _read_input(Path(args.input), _int_tuple(args.views, 2, "--views"))
    if lf.C != 3:
        raise ConfigMismatch(f"model expects RGB light fields, got C={lf.C}")
    gt = _read_input(Path(args.gt), lf.shape[:2]) if args.gt else None
    if gt is not None and gt.shape != lf.shape:
        raise ConfigMismatch(f"ground truth {gt.shape} does not match input {lf.shape}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ad.precision(cfg.precision):
        pred = model.predict(lf)
    U, V, X, Y, _ = lf.shape
    v_epi = (V - 1) // 2 if args.epi_v is None else args.epi_v
    y_epi = (Y - 1) // 2 if args.epi_y is None else args.epi_y
    u_epi = (U - 1) // 2 if args.epi_u is None else args.epi_u
    x_epi = (X - 1) // 2 if args.epi_x is None else args.epi_x
    write_mosaic_png(out / "input.png", lf)
    write_mosaic_png(out / "initial.png", pred.initial)
    write_mosaic_png(out / "final.png", pred.final)
    write_mosaic_png(out / "residual.png", np.clip(0.5 + pred.residual.data, 0.0, 1.0))
    write_lfd(out / "final.lfd", pred.final)
    lfs = (lf, pred.initial, pred.final)
    write_png(out / "epi_horizontal.png", _epi_strip(lfs, "horizontal", v_epi, y_epi))
    write_png(out / "epi_vertical.png", _epi_strip(lfs, "vertical", u_epi, x_epi))
    report = {
        "input": str(args.input),
        "checkpoint": str(args.ckpt),
        "dims": list(lf.shape),
        "epi_horizontal": {"v": v_epi, "y": y_epi},
        "epi_vertical": {"u": u_epi, "x": x_epi},
        "max_abs_offset": float(np.abs(pred.offsets).max()),
        "identical_to_input": bool(np.array_equal(quantize8(pred.final.data), quantize8(lf.data))),
    }
    if gt is not None:
        report["model"] = scene_metrics("final", pred.final, gt).record()
        report["initial"] = scene_metrics("initial", pred.initial, gt).record()
        report["baseline"] = scene_metrics("input", lf, gt).record()
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _report(checks, timings: bool) -> int:
    for c in checks:
        print(c.line(timings))
    ok = all_passed(checks)
    n_fail = sum(not c.passed for c in checks)
    print(f"{'PASS' if ok else 'FAIL'}: {len(checks) - n_fail}/{len(checks)} properties hold")
    return EXIT_OK if ok else EXIT_VERIFY


def _with_fault(op, fn):
    if not op:
        return fn()
    with ad.inject_adjoint_fault(op):
        return fn()


def cmd_gradcheck(args) -> int:
    if args.tol is not None and args.tol <= 0:
        raise InvalidConfig(f"--tol must be positive, got {args.tol}")
    checks = _with_fault(args.inject_fault, lambda: gradcheck_suite(args.seeds, args.tol))
    return _report(checks, args.timings)


def cmd_selftest(args) -> int:
    checks = _with_fault(args.inject_fault, lambda: property_suite(args.seeds))
    return _report(checks, args.timings)


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfrr", description="Light-field raindrop removal by 4D re-sampling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic raindrop dataset")
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--dims", default="3,3,48,48", help="U,V,X,Y (default 3,3,48,48)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model on a synthetic dataset")
    t.add_argument("--config", help="key=value config file; trailing k=v arguments override it")
    t.add_argument("overrides", nargs="*", metavar="k=v")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="luma PSNR/SSIM of a checkpoint against the degraded input")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("val", "train", "all"), default="val")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("run", help="restore one light field and write visual outputs")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--input", required=True, help=".lfd file or PNG view mosaic")
    r.add_argument("--out", required=True)
    r.add_argument("--gt", help="ground-truth light field for metrics")
    r.add_argument("--views", default="3,3", help="U,V of a PNG mosaic input (default 3,3)")
    r.add_argument("--epi-v", type=int, dest="epi_v")
    r.add_argument("--epi-y", type=int, dest="epi_y")
    r.add_argument("--epi-u", type=int, dest="epi_u")
    r.add_argument("--epi-x", type=int, dest="epi_x")
    r.set_defaults(fn=cmd_run)

    for name, fn, help_ in (("gradcheck", cmd_gradcheck, "finite-difference checks of every adjoint"),
                            ("selftest", cmd_selftest, "the full invariant suite")):
        g = sub.add_parser(name, help=help_)
        if name == "gradcheck":
            g.add_argument("--tol", type=float, help="override the per-check tolerance")
        g.add_argument("--seeds", type=int, default=20)
        g.add_argument("--timings", action="store_true", help="append per-check run time")
        g.add_argument("--inject-fault", dest="inject_fault", metavar="OP",
                       help="negate OP's adjoint (negative control)")
        g.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (InvalidConfig, ConfigMismatch, EmptyDataset, UsageError) as exc:
        print(f"lfrr: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, BadMagic, BadVersion, TruncatedFile, DimensionOverflow) as exc:
        print(f"lfrr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
