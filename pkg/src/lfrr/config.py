"""Training configuration and its ``key=value`` text form.

Keys are dotted (``model.c=16``, ``train.lr0=3e-4``); blank lines and
``#`` comments are ignored; later assignments win, so command-line
overrides are simply appended after the file's lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import InvalidConfig
from .losses import LossWeights
from .network import Ablation, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(M=2, N=2, c=16))
    ablation: Ablation = field(default_factory=Ablation)
    weights: LossWeights = field(default_factory=LossWeights)
    lr0: float = 3e-4
    epochs: int = 300
    batch: int = 1
    patch: int = 32
    stage2_start: float = 0.75
    seed: int = 0
    precision: str = "f64"
    val_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.stage2_start <= 1:
            raise InvalidConfig(f"stage2_start must be in (0, 1], got {self.stage2_start}")
        if self.lr0 <= 0:
            raise InvalidConfig(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1 or self.batch < 1 or self.patch < 1 or self.val_every < 0:
            raise InvalidConfig("epochs, batch and patch must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise InvalidConfig(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def stage2_epoch(self) -> int:
        """First epoch trained with the stage-2 objective."""
        return int(round(self.stage2_start * self.epochs))


# dotted key -> (section attribute or None, field name)
_SECTIONS = {"model": "model", "ablation": "ablation", "loss": "weights"}
_ALIASES = {("loss", "lambda"): "lam", ("ablation", "resample"): "resample", ("ablation", "refine"): "refine"}


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def to_flat(cfg: TrainConfig) -> dict[str, object]:
    out = {}
    for section, attr in _SECTIONS.items():
        sub = getattr(cfg, attr)
        for f in fields(sub):
            key = "lambda" if (section, f.name) == ("loss", "lam") else f.name
            out[f"{section}.{key}"] = getattr(sub, f.name)
    for f in fields(cfg):
        if f.name not in _SECTIONS.values():
            out[f"train.{f.name}"] = getattr(cfg, f.name)
    return out


def format_config(cfg: TrainConfig) -> str:
    lines = ["# resolved lfrr configuration"]
    for key, value in to_flat(cfg).items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: TrainConfig, assignments: list[str]) -> TrainConfig:
    """Apply ``key=value`` strings in order; unknown keys raise :class:`InvalidConfig`."""
    flat = to_flat(cfg)
    for line in assignments:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in flat:
            raise InvalidConfig(f"unknown config key {key!r}")
        try:
            flat[key] = _parse_value(raw, flat[key])
        except ValueError:
            raise InvalidConfig(f"bad value for {key}: {raw!r}") from None
    return from_flat(flat)


def from_flat(flat: dict[str, object]) -> TrainConfig:
    grouped: dict[str, dict] = {s: {} for s in _SECTIONS}
    top = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section in grouped:
            grouped[section][_ALIASES.get((section, name), name)] = value
        elif section == "train":
            top[name] = value
        else:
            raise InvalidConfig(f"unknown config section {section!r}")
    try:
        return TrainConfig(
            model=ModelConfig(**grouped["model"]),
            ablation=Ablation(**grouped["ablation"]),
            weights=LossWeights(**grouped["loss"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    return apply_overrides(base or TrainConfig(), text.splitlines())


def with_changes(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
