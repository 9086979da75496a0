"""Flat key=value configuration shared by every CLI command.

Precedence is command line flag > config file > built-in default. The
file format is one `key = value` per line, `#` starts a comment, and
unknown keys are rejected so typos fail loudly instead of silently
running with defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from stepsmith.errors import UsageError
from stepsmith.models import PlacementConfig, SelectionConfig, TrainConfig


@dataclass(frozen=True)
class PipelineConfig:
    # paths
    dataset_dir: str = "dataset"
    cache_dir: str = "cache"
    out_dir: str = "out"
    placement_checkpoint: str = ""  # empty -> <out_dir>/placement.ckpt
    selection_checkpoint: str = ""  # empty -> <out_dir>/selection.ckpt

    # architecture; shrink these for toy-scale runs
    context_beats: int = 16
    placement_conv_units: tuple = (16, 32)
    placement_lstm_units: int = 128
    placement_head_units: tuple = (512, 256)
    selection_conv_units: tuple = (8, 16)
    selection_lstm_units: int = 256
    selection_head_units: tuple = (512, 256)
    lstm_dropout: float = 0.2
    head_dropout: float = 0.5

    # training
    seed: int = 0
    lr: float = 0.001
    batch_size: int = 32
    selection_batch_size: int = 64
    batches_per_epoch: int = 400
    max_epochs: int = 1000
    warmup: int = 100
    patience: int = 20
    workers: int = 1

    # generation
    threshold: float = 0.5
    temperature: float = 1.0
    difficulty: int = 0  # 0 -> derive from bpm and song length
    difficulty_overrides: tuple = ()  # 5 fine values, empty -> default plan


def _parse_value(key: str, text, default):
    if not isinstance(text, str):
        return text  # already typed (programmatic override)
    text = text.strip()
    try:
        if isinstance(default, tuple):
            if not text:
                return ()
            return tuple(int(part.strip()) for part in text.split(","))
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {text!r}") from None
    return text


def _validate(cfg: PipelineConfig) -> PipelineConfig:
    positive = (
        "context_beats", "placement_lstm_units", "selection_lstm_units",
        "batch_size", "selection_batch_size", "batches_per_epoch",
        "max_epochs", "workers",
    )
    for name in positive:
        if getattr(cfg, name) < 1:
            raise UsageError(f"config key {name!r} must be >= 1")
    for name in ("placement_conv_units", "placement_head_units",
                 "selection_conv_units", "selection_head_units"):
        value = getattr(cfg, name)
        if len(value) != 2 or any(v < 1 for v in value):
            raise UsageError(f"config key {name!r} needs two values >= 1")
    for name in ("lstm_dropout", "head_dropout"):
        if not 0.0 <= getattr(cfg, name) < 1.0:
            raise UsageError(f"config key {name!r} must lie in [0, 1)")
    if not 0.0 <= cfg.threshold <= 1.0:
        raise UsageError("config key 'threshold' must lie in [0, 1]")
    if cfg.temperature < 0.0:
        raise UsageError("config key 'temperature' must be >= 0")
    if cfg.lr <= 0.0:
        raise UsageError("config key 'lr' must be > 0")
    if cfg.difficulty < 0:
        raise UsageError("config key 'difficulty' must be >= 0")
    if cfg.difficulty_overrides and len(cfg.difficulty_overrides) != 5:
        raise UsageError("config key 'difficulty_overrides' needs exactly 5 values")
    if cfg.warmup < 0 or cfg.patience < 1:
        raise UsageError("config keys 'warmup'/'patience' out of range")
    return cfg


def _read_file(path: str) -> dict:
    entries = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def load_config(path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a validated PipelineConfig from a file plus flag overrides."""
    known = {f.name: f for f in fields(PipelineConfig)}
    merged = {}
    for source in (_read_file(path) if path else {}), (overrides or {}):
        for key, value in source.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = value
    cfg = PipelineConfig()
    typed = {k: _parse_value(k, v, getattr(cfg, k)) for k, v in merged.items()}
    return _validate(replace(cfg, **typed))


def placement_model_config(cfg: PipelineConfig) -> PlacementConfig:
    return PlacementConfig(
        context_beats=cfg.context_beats,
        conv_units=cfg.placement_conv_units,
        lstm_units=cfg.placement_lstm_units,
        head_units=cfg.placement_head_units,
        lstm_dropout=cfg.lstm_dropout,
        head_dropout=cfg.head_dropout,
    )


def selection_model_config(cfg: PipelineConfig) -> SelectionConfig:
    return SelectionConfig(
        conv_units=cfg.selection_conv_units,
        lstm_units=cfg.selection_lstm_units,
        head_units=cfg.selection_head_units,
        head_dropout=cfg.head_dropout,
    )


def checkpoint_path(cfg: PipelineConfig, kind: str) -> str:
    explicit = getattr(cfg, f"{kind}_checkpoint")
    return explicit or os.path.join(cfg.out_dir, f"{kind}.ckpt")


def train_run_config(cfg: PipelineConfig, kind: str) -> TrainConfig:
    batch = cfg.batch_size if kind == "placement" else cfg.selection_batch_size
    return TrainConfig(
        lr=cfg.lr,
        batch_size=batch,
        batches_per_epoch=cfg.batches_per_epoch,
        max_epochs=cfg.max_epochs,
        warmup=cfg.warmup,
        patience=cfg.patience,
        seed=cfg.seed,
        csv_path=os.path.join(cfg.out_dir, f"{kind}_curve.csv"),
        checkpoint_path=checkpoint_path(cfg, kind),
    )
