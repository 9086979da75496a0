"""Shared training loop for both models, with CSV logs and checkpoints.

Both models train the same way: Adam at 1e-3, a learning rate that
halves after 5 validation-loss epochs without improvement, and early
stopping once a watched series goes `patience` epochs past its
post-warmup best. Placement watches validation PR-AUC (maximize);
selection watches validation loss (minimize). The weights from the best
watched epoch are restored into the model before returning.

Checkpoints hold every parameter plus the dataset normalization stats
("norm/mean", "norm/std") and an 8-byte hash of the architecture config
("meta/config_hash"), so a file can't silently load into a model with
different dimensions.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from stepsmith.beatgrid import batch_iterator
from stepsmith.errors import DataError, NumericError
from stepsmith.evalmetrics import binary_cross_entropy, pr_auc
from stepsmith.models.placement import PlacementModel, placement_forward
from stepsmith.models.selection import SelectionModel, selection_forward
from stepsmith.neural.losses import bce_loss, softmax_ce_loss
from stepsmith.neural.optim import Adam, early_stop, reduce_on_plateau
from stepsmith.neural.tensor import concat
from stepsmith.neural.weights_io import load_weights, save_weights

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    batches_per_epoch: int = 400
    max_epochs: int = 1000
    warmup: int = 100
    patience: int = 20
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    seed: int = 0
    csv_path: str | None = None
    checkpoint_path: str | None = None


@dataclass(frozen=True)
class TrainingReport:
    epochs_run: int
    best_epoch: int
    best_value: float
    watched: str
    rows: tuple  # of (epoch, train_loss, valid_loss, metric, lr)


def config_hash(config) -> np.ndarray:
    """8-byte architecture fingerprint as a (8,) float32 vector."""
    digest = hashlib.blake2b(repr(config).encode(), digest_size=8).digest()
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float32)


def _snapshot(model) -> dict:
    return {name: p.data.copy() for name, p in model.params().items()}


def _norm_arrays(dataset, model):
    stats = dataset.get("norm")
    if stats is not None:
        return np.asarray(stats.mean, np.float32), np.asarray(stats.std, np.float32)
    shape = (model.config.bands, model.config.channels)
    return np.zeros(shape, np.float32), np.ones(shape, np.float32)


def save_checkpoint(model, path, dataset=None) -> None:
    mean, std = _norm_arrays(dataset or {}, model)
    tensors = dict(model.params())
    tensors["norm/mean"] = mean
    tensors["norm/std"] = std
    tensors["meta/config_hash"] = config_hash(model.config)
    save_weights(tensors, path)


def load_checkpoint(path, model) -> dict:
    """Restore model weights from ``path``; returns the extra tensors.

    The stored config hash must match the model's architecture config.
    """
    from stepsmith.errors import CheckpointError

    tensors = load_weights(path)
    stored = tensors.pop("meta/config_hash", None)
    if stored is None or not np.array_equal(stored, config_hash(model.config)):
        raise CheckpointError(
            f"{path}: checkpoint was written for a different model configuration"
        )
    extras = {name: tensors.pop(name) for name in list(tensors)
              if name.startswith("norm/")}
    model.load_state(tensors)
    return extras


def _run(model, dataset, config: TrainConfig, batch_loss_fn, valid_fn,
         metric_column: str, watch: str, mode: str) -> TrainingReport:
    train = dataset.get("train") or []
    valid = dataset.get("valid") or []
    if not train or not valid:
        raise DataError("training needs nonempty train and valid example lists")

    batches = batch_iterator(train, config.batch_size, config.batches_per_epoch,
                             config.seed)
    opt = Adam(model.params(), lr=config.lr)
    drop_rng = np.random.default_rng(config.seed + 1)

    rows = []
    valid_losses: list = []
    watched_series: list = []
    best_value = None
    best_epoch = 0
    best_state = _snapshot(model)

    csv_file = None
    writer = None
    if config.csv_path:
        csv_file = open(config.csv_path, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["epoch", "train_loss", "valid_loss", metric_column, "lr"])

    try:
        for epoch in range(1, config.max_epochs + 1):
            opt.lr = config.lr * reduce_on_plateau(
                valid_losses, config.plateau_factor, config.plateau_patience,
                mode="minimize",
            )
            batch_losses = []
            for _ in range(config.batches_per_epoch):
                loss = batch_loss_fn(model, next(batches), drop_rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite training loss {value} at epoch {epoch}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                batch_losses.append(value)
            train_loss = float(np.mean(batch_losses))

            valid_loss, metric = valid_fn(model, valid)
            valid_losses.append(valid_loss)
            watched = valid_loss if watch == "loss" else metric
            watched_series.append(watched)
            rows.append((epoch, train_loss, valid_loss, metric, opt.lr))
            if writer:
                writer.writerow([epoch, train_loss, valid_loss, metric, opt.lr])
                csv_file.flush()

            better = (
                best_value is None
                or (watched > best_value if mode == "maximize" else watched < best_value)
            )
            if better:
                best_value, best_epoch, best_state = watched, epoch, _snapshot(model)
            if early_stop(watched_series, config.warmup, config.patience, mode):
                break
    finally:
        if csv_file:
            csv_file.close()

    model.load_state(best_state)
    if config.checkpoint_path:
        save_checkpoint(model, config.checkpoint_path, dataset)
    return TrainingReport(
        epochs_run=len(rows),
        best_epoch=best_epoch,
        best_value=float(best_value),
        watched=watch if watch == "loss" else metric_column,
        rows=tuple(rows),
    )


def _placement_batch_loss(model, batch, rng):
    preds = concat(
        [model.forward(ex, training=True, rng=rng) for ex in batch], axis=0
    )
    targets = np.stack(
        [np.asarray(ex.target.slots, dtype=preds.data.dtype) for ex in batch]
    )
    return bce_loss(preds, targets)


def _placement_valid(model, valid):
    probs = np.stack([placement_forward(model, ex) for ex in valid])
    targets = np.stack([ex.target.slots for ex in valid]).astype(np.float64)
    loss = binary_cross_entropy(probs.ravel(), targets.ravel())
    auc = pr_auc(probs.ravel(), targets.ravel())
    return loss, (0.0 if auc is None else auc)


def train_placement(model: PlacementModel, dataset: dict,
                    config: TrainConfig = TrainConfig()) -> TrainingReport:
    """BCE training; early stop and best weights by validation PR-AUC."""
    return _run(model, dataset, config, _placement_batch_loss, _placement_valid,
                metric_column="valid_prauc", watch="metric", mode="maximize")


def _selection_batch_loss(model, batch, rng):
    logits = concat(
        [model.forward_logits(ex, training=True, rng=rng) for ex in batch], axis=0
    )
    targets = np.asarray([ex.target for ex in batch], dtype=np.int64)
    return softmax_ce_loss(logits, targets)


def _selection_valid(model, valid):
    probs = np.stack([selection_forward(model, ex) for ex in valid])
    targets = np.asarray([ex.target for ex in valid], dtype=np.int64)
    picked = probs[np.arange(len(valid)), targets]
    loss = float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))
    accuracy = float(np.mean(np.argmax(probs, axis=1) == targets))
    return loss, accuracy


def train_selection(model: SelectionModel, dataset: dict,
                    config: TrainConfig = TrainConfig(batch_size=64)) -> TrainingReport:
    """Cross-entropy training; early stop and best weights by validation loss."""
    return _run(model, dataset, config, _selection_batch_loss, _selection_valid,
                metric_column="valid_acc", watch="loss", mode="minimize")
