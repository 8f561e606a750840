"""Mini-batch training, feed-forward-only fine-tuning and position prediction."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from ..dataset import PLATE_DIMS
from ..tensor_core import ShapeError
from .layers import FullyConnected
from .model import Model, ModelSpec, backward, forward, init_model, mse, update_running_stats
from .optim import AdamState, adam_step, step_decay_lr

EVAL_BATCH = 64


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 25
    lr_drop_factor: float = 0.1
    lr_drop_period: int = 15
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    # Fully connected layers with fan-in above this get their step size
    # scaled by fc_fan_in_ref / fan_in; 0 disables the scaling.
    fc_fan_in_ref: int = 0
    # Start the output bias at the mean training target (fresh networks only).
    center_output: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.lr_drop_period < 1:
            raise ValueError("lr, batch_size and lr_drop_period must be positive")
        if not 0 < self.lr_drop_factor <= 1:
            raise ValueError("lr_drop_factor must lie in (0, 1]")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("max_epochs must be >= 0 and early_stop_patience >= 1")
        if self.fc_fan_in_ref < 0:
            raise ValueError("fc_fan_in_ref must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return step_decay_lr(epoch, self.lr, self.lr_drop_factor, self.lr_drop_period)


def layer_lr_scales(spec: ModelSpec, fan_in_ref: int) -> list[float]:
    """Per-layer step multipliers; only wide fully connected layers are damped."""
    scales = [1.0] * len(spec.layers)
    if fan_in_ref:
        for i, layer in enumerate(spec.layers):
            if isinstance(layer, FullyConnected):
                fan_in = int(np.prod(spec.in_shape(i)))
                scales[i] = min(1.0, fan_in_ref / fan_in)
    return scales


def predict(model: Model, x, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Eval-mode outputs, computed in fixed-size chunks."""
    x = np.asarray(x)
    outs = [forward(model, x[i:i + EVAL_BATCH], "eval", start=start, stop=stop)[0]
            for i in range(0, len(x), EVAL_BATCH)]
    return np.concatenate(outs) if outs else np.zeros(0)


def _fit(model: Model, train_set, val_set, cfg: TrainConfig, start: int = 0) -> Model:
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train_set)
    x_val, y_val = (np.asarray(a, dtype=np.float64) for a in val_set)
    if len(x_tr) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if len(x_tr) != len(y_tr) or len(x_val) != len(y_val):
        raise ShapeError("inputs and targets differ in length")

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    skip = frozenset(i for i in range(len(model.spec.layers)) if model.frozen[i])
    scales = layer_lr_scales(model.spec, cfg.fc_fan_in_ref)
    best_val = math.inf
    best = (copy.deepcopy(model.params), copy.deepcopy(model.state))
    stale = 0
    history = []
    n = len(x_tr)
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred, cache = forward(model, x_tr[idx], "train", rng, start=start)
            loss = mse(pred, y_tr[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = backward(model, cache, y_tr[idx])
            adam_step(model.params, grads, adam, lr, skip, scales)
            model.version += 1
            update_running_stats(model, cache, len(idx))
            total += loss * len(idx)
        val_loss = mse(predict(model, x_val, start=start), y_val)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "lr": lr, "train_loss": total / n, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best = (copy.deepcopy(model.params), copy.deepcopy(model.state))
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.params, model.state = best
    model.history = history
    model.version += 1
    return model


def train(spec: ModelSpec, train_set, val_set, cfg: TrainConfig = TrainConfig()) -> Model:
    """Train a fresh network on targets already scaled to [0, 1].

    Stops after ``max_epochs`` or once validation loss has not improved for
    ``early_stop_patience`` epochs; the best-validation parameters are kept.
    With ``center_output`` the last bias is shifted so the initial batch-mode
    prediction averages to the mean target.
    """
    model = init_model(spec, cfg.seed)
    if cfg.center_output:
        x, y = train_set
        x = np.asarray(x)[:EVAL_BATCH]
        pred, _ = forward(model, x, "train", dropout=False)
        model.params[-2]["b"] += float(np.mean(np.asarray(y, dtype=np.float64)) - np.mean(pred))
    return _fit(model, train_set, val_set, cfg)


def finetune(model: Model, target_train, target_val, cfg: TrainConfig = TrainConfig()) -> Model:
    """Retrain only the layers after the last Dropout on new data.

    Everything up to and including the last Dropout is frozen, batch-norm
    running statistics included, so that part is a fixed feature extractor
    whose outputs are computed once.
    """
    expected = model.spec.input_shape[:2]
    for name, (x, _) in (("train", target_train), ("validation", target_val)):
        if np.shape(x)[1:3] != expected:
            raise ShapeError(f"fine-tuning {name} images {np.shape(x)[1:]} do not match model input {expected}")
    ft = model.copy()
    head = ft.spec.head_start()
    ft.frozen = tuple(i < head for i in range(len(ft.spec.layers)))
    feats_tr = predict(ft, target_train[0], stop=head)
    feats_val = predict(ft, target_val[0], stop=head)
    return _fit(ft, (feats_tr, target_train[1]), (feats_val, target_val[1]), cfg, start=head)


def normalize_positions(xy_mm, plate_dims=PLATE_DIMS) -> np.ndarray:
    return np.asarray(xy_mm, dtype=np.float64) / np.asarray(plate_dims, dtype=np.float64)


def predict_position(model_x: Model, model_y: Model, images, plate_dims=PLATE_DIMS) -> np.ndarray:
    """Positions in mm, one ``(x, y)`` row per image."""
    if model_x.spec.input_shape != model_y.spec.input_shape:
        raise ShapeError("x and y models expect different input shapes")
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    px = predict(model_x, images) * plate_dims[0]
    py = predict(model_y, images) * plate_dims[1]
    return np.stack([px, py], axis=1)
