"""Flat ``key = value`` training configuration files.

One key per line, ``#`` starts a comment. Every key in ``KEYS`` must be
present; unknown keys are rejected. Values:

    conv_blocks   comma-separated ``out:kernel:stride:pool`` blocks, e.g. ``8:3:1:2, 16:3:1:2``
    image_size    ``HxW``
    clip_norm     ``none`` or a positive number
    phase1_epochs ``auto`` (20% of epochs) or an integer
    booleans      ``true`` / ``false``
"""

from __future__ import annotations

from pathlib import Path

from .backbone import BackboneConfig, ConvBlock
from .data import AugmentConfig, SplitSpec
from .losses import Margins
from .mining import SamplerConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


KEYS = (
    "epochs", "phase1_epochs", "learning_rate", "momentum", "phase1_learning_rate",
    "alpha_t", "mu1", "mu2", "b", "beta",
    "classes_per_batch", "samples_per_class", "strategy", "hard_mining_after", "oversample_with_similarity",
    "image_size", "conv_blocks", "embedding_dim", "dropout_rate", "shared_streams", "pooling",
    "augment", "rotation_range", "zoom_range", "horizontal_flip",
    "train_fraction", "validation_fraction_of_train",
    "seed", "similarity_momentum", "clip_norm",
)


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _size(v: str) -> tuple[int, int]:
    h, w = v.lower().split("x")
    return int(h), int(w)


def _blocks(v: str) -> tuple[ConvBlock, ...]:
    return tuple(ConvBlock(*(int(x) for x in part.strip().split(":"))) for part in v.split(",") if part.strip())


def parse_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in raw:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        raw[k] = v
    return raw


def config_from_dict(raw: dict[str, str]) -> TrainConfig:
    missing = [k for k in KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing config key: {missing[0]}" + (f" (and {len(missing) - 1} more)"
                                                                  if len(missing) > 1 else ""))
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    key = None
    try:
        key = "image_size"
        h, w = _size(raw[key])
        key = "conv_blocks"
        blocks = _blocks(raw[key])
        key = "backbone"
        backbone = BackboneConfig(
            input_size=(3, h, w), conv_blocks=blocks, embedding_dim=int(raw["embedding_dim"]),
            num_classes=2, dropout_rate=float(raw["dropout_rate"]),
            shared_streams=_bool(raw["shared_streams"]), pooling=raw["pooling"],
        )
        key = "margins"
        margins = Margins(mu1=float(raw["mu1"]), mu2=float(raw["mu2"]), b=float(raw["b"]),
                          alpha_t=float(raw["alpha_t"]))
        key = "sampler"
        sampler = SamplerConfig(int(raw["classes_per_batch"]), int(raw["samples_per_class"]), raw["strategy"],
                                _bool(raw["oversample_with_similarity"]))
        key = "augment"
        augment = AugmentConfig(float(raw["rotation_range"]), float(raw["zoom_range"]),
                                _bool(raw["horizontal_flip"])) if _bool(raw["augment"]) else None
        key = "split"
        tf = float(raw["train_fraction"])
        split = SplitSpec(tf, 1.0 - tf, float(raw["validation_fraction_of_train"]), int(raw["seed"]))
        key = "training"
        p1 = raw["phase1_epochs"].strip().lower()
        clip = raw["clip_norm"].strip().lower()
        return TrainConfig(
            epochs=int(raw["epochs"]),
            phase1_epochs=None if p1 == "auto" else int(p1),
            learning_rate=float(raw["learning_rate"]),
            momentum=float(raw["momentum"]),
            phase1_learning_rate=float(raw["phase1_learning_rate"]),
            margins=margins, sampler=sampler, hard_mining_after=int(raw["hard_mining_after"]),
            backbone=backbone, augment=augment, split=split, seed=int(raw["seed"]),
            similarity_momentum=float(raw["similarity_momentum"]), beta=float(raw["beta"]),
            clip_norm=None if clip == "none" else float(clip),
        )
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid value for {key}: {e}") from e


def load_config(path) -> TrainConfig:
    return config_from_dict(parse_text(Path(path).read_text()))


def config_to_dict(c: TrainConfig) -> dict[str, str]:
    bb = c.backbone
    aug = c.augment or AugmentConfig()
    return {
        "epochs": str(c.epochs),
        "phase1_epochs": "auto" if c.phase1_epochs is None else str(c.phase1_epochs),
        "learning_rate": repr(c.learning_rate),
        "momentum": repr(c.momentum),
        "phase1_learning_rate": repr(c.phase1_learning_rate),
        "alpha_t": repr(c.margins.alpha_t),
        "mu1": repr(c.margins.mu1),
        "mu2": repr(c.margins.mu2),
        "b": repr(c.margins.b),
        "beta": repr(c.beta),
        "classes_per_batch": str(c.sampler.classes_per_batch),
        "samples_per_class": str(c.sampler.samples_per_class),
        "strategy": c.sampler.strategy,
        "hard_mining_after": str(c.hard_mining_after),
        "oversample_with_similarity": str(c.sampler.oversample_with_similarity).lower(),
        "image_size": f"{bb.input_size[1]}x{bb.input_size[2]}",
        "conv_blocks": ", ".join(f"{b.out_channels}:{b.kernel}:{b.stride}:{b.pool}" for b in bb.conv_blocks),
        "embedding_dim": str(bb.embedding_dim),
        "dropout_rate": repr(bb.dropout_rate),
        "shared_streams": str(bb.shared_streams).lower(),
        "pooling": bb.pooling,
        "augment": str(c.augment is not None).lower(),
        "rotation_range": repr(aug.rotation_range),
        "zoom_range": repr(aug.zoom_range),
        "horizontal_flip": str(aug.horizontal_flip).lower(),
        "train_fraction": repr(c.split.train_fraction),
        "validation_fraction_of_train": repr(c.split.validation_fraction_of_train),
        "seed": str(c.seed),
        "similarity_momentum": repr(c.similarity_momentum),
        "clip_norm": "none" if c.clip_norm is None else repr(c.clip_norm),
    }


def dump_config(c: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_dict(c).items())
