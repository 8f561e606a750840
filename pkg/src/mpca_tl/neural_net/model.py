"""Model specs, the three regression CNN types, and forward/backward passes."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..tensor_core import ShapeError
from .layers import (BatchNorm, Conv2D, Dropout, FullyConnected, Input, Layer, MaxPool,
                     RegressionOutput, ReLU, Sigmoid)

DROPOUT_RATE = 0.2


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    shapes: tuple[tuple, ...] = ()

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers or not isinstance(layers[0], Input):
            raise ShapeError("a model must start with an Input layer")
        if not (len(layers) >= 3 and isinstance(layers[-1], RegressionOutput)
                and isinstance(layers[-2], FullyConnected) and layers[-2].units == 1):
            raise ShapeError("a model must end with FullyConnected(1) + RegressionOutput")
        shapes = [layers[0].out_shape()]
        for i, layer in enumerate(layers[1:], start=2):
            try:
                shapes.append(layer.out_shape(shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i}: {exc}") from None
            if any(d < 1 for d in shapes[-1]):
                raise ShapeError(f"layer {i} ({layer.describe()}) produces empty output {shapes[-1]}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.shapes[0]

    def in_shape(self, i: int) -> tuple:
        return self.shapes[i - 1] if i > 0 else self.shapes[0]

    def head_start(self) -> int:
        """Index of the first layer after the last Dropout (the feed-forward head)."""
        drops = [i for i, layer in enumerate(self.layers) if isinstance(layer, Dropout)]
        return drops[-1] + 1 if drops else 1


def _head(first: int | None = None) -> list[Layer]:
    units = ([first] if first else []) + [20, 10, 5]
    out: list[Layer] = []
    for u in units:
        out += [FullyConnected(u), Sigmoid()]
    return out + [FullyConnected(1), RegressionOutput()]


def build_type(kind: int, input_dims: tuple[int, int], dropout: float = DROPOUT_RATE) -> ModelSpec:
    """Layer stacks of the three regression CNNs.

    Type 1 works on raw images; types 2 and 3 take MPCA-reduced images from
    circular and rectangular sensor networks. Convolutions feeding a batch
    norm carry no bias since the normalisation cancels it.
    """
    h, w = input_dims
    conv = lambda kh, kw, f, sh=1, sw=1: Conv2D(kh, kw, f, sh, sw, bias=False)
    if kind == 1:
        body = [
            conv(1, 6, 4, 1, 3), BatchNorm(), ReLU(),
            conv(1, 4, 4, 1, 2), BatchNorm(), ReLU(),
            MaxPool(1, 6, 1, 2),
            conv(1, 2, 32), BatchNorm(), ReLU(),
            conv(1, 4, 4, 1, 2), BatchNorm(),
            MaxPool(1, 6, 1, 2),
            conv(1, 2, 32), BatchNorm(), ReLU(),
            Dropout(dropout),
        ]
        head = _head(30)
    elif kind == 2:
        body = [
            conv(1, 6, 4, 1, 3), BatchNorm(), ReLU(),
            conv(2, 4, 4, 1, 2), BatchNorm(), ReLU(),
            MaxPool(2, 6, 1, 2),
            conv(2, 2, 32), BatchNorm(), ReLU(),
            Dropout(dropout),
        ]
        head = _head()
    elif kind == 3:
        body = [conv(1, 6, 4, 1, 3), BatchNorm(), ReLU(), Dropout(dropout)]
        head = _head()
    else:
        raise ValueError(f"unknown CNN type {kind}")
    return ModelSpec(tuple([Input(h, w, 1)] + body + head))


@dataclass
class Model:
    """Parameters and running statistics of one network.

    ``frozen[i]`` marks layer ``i`` as not trainable; frozen layers also run
    in inference mode (running batch-norm statistics, no dropout).
    """

    spec: ModelSpec
    params: list[dict]
    state: list[dict]
    frozen: tuple[bool, ...]
    history: list[dict] = field(default_factory=list)
    version: int = 0

    def copy(self) -> "Model":
        return Model(self.spec, copy.deepcopy(self.params), copy.deepcopy(self.state),
                     tuple(self.frozen), copy.deepcopy(self.history), 0)

    def trainable(self, i: int) -> bool:
        return self.spec.layers[i].has_params and not self.frozen[i]

    def n_params(self) -> int:
        return sum(v.size for p in self.params for v in p.values())


TrainedModel = Model


def init_model(spec: ModelSpec, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    params, state = [], []
    for i, layer in enumerate(spec.layers):
        shape = spec.in_shape(i)
        params.append(layer.init_params(shape, rng))
        state.append(layer.init_state(shape))
    return Model(spec, params, state, tuple(False for _ in spec.layers))


@dataclass
class ForwardCache:
    caches: list
    start: int
    model_id: int
    version: int
    train: bool
    predictions: np.ndarray


def _as_batch(x, spec: ModelSpec, start: int) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.longdouble:
        x = x.astype(np.float64, copy=False)
    if start == 0 and x.ndim == 3:
        x = x[..., None]
    expected = spec.in_shape(start) if start else spec.input_shape
    if x.shape[1:] != tuple(expected):
        raise ShapeError(f"batch of shape {x.shape[1:]} does not match model input {tuple(expected)}")
    return x


def forward(model: Model, batch, mode: str = "eval", rng: np.random.Generator | None = None,
            dropout: bool = True, start: int = 0, stop: int | None = None):
    """Run layers ``start..stop`` and return ``(outputs, cache)``.

    With the defaults this maps images ``(n, H, W)`` to predictions ``(n,)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    layers = model.spec.layers
    stop = len(layers) if stop is None else stop
    x = _as_batch(batch, model.spec, start)
    if rng is None:
        rng = np.random.default_rng(0)
    caches = []
    for i in range(start, stop):
        layer = layers[i]
        train = mode == "train" and not model.frozen[i]
        if isinstance(layer, Dropout) and not dropout:
            train = False
        x, cache = layer.forward(model.params[i], model.state[i], x, train, rng)
        caches.append(cache)
    out = x[:, 0] if stop == len(layers) else x
    return out, ForwardCache(caches, start, id(model), model.version, mode == "train", out)


def mse(pred, target) -> float:
    d = np.asarray(pred) - np.asarray(target)
    return float(np.mean(d * d))


def backward(model: Model, cache: ForwardCache, targets) -> list[dict]:
    """Gradients of the mean squared error for every layer's parameters.

    Frozen layers get zero gradients. Propagation stops below the earliest
    trainable layer since nothing upstream needs a gradient.
    """
    if cache.model_id != id(model) or cache.version != model.version or not cache.train:
        raise StaleCacheError("backward needs the cache of a train-mode forward on the current parameters")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    pred = cache.predictions
    if pred.shape != targets.shape:
        raise ShapeError(f"{targets.shape[0]} targets for {pred.shape[0]} predictions")
    layers = model.spec.layers
    grads = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
    trainable = [i for i in range(cache.start, len(layers)) if model.trainable(i)]
    if not trainable:
        return grads
    lowest = trainable[0]
    dy = (2.0 / pred.size) * (pred - targets)[:, None]
    for i in range(len(layers) - 1, lowest - 1, -1):
        dy, g = layers[i].backward(model.params[i], cache.caches[i - cache.start], dy, need_dx=i > lowest)
        if model.trainable(i):
            grads[i] = g
    return grads


def update_running_stats(model: Model, cache: ForwardCache, batch_size: int) -> None:
    for i in range(cache.start, len(model.spec.layers)):
        layer = model.spec.layers[i]
        if isinstance(layer, BatchNorm) and not model.frozen[i]:
            model.state[i] = BatchNorm.updated_state(model.state[i], cache.caches[i - cache.start],
                                                     batch_size * int(np.prod(model.spec.in_shape(i)[:-1])))


def _extended(model: Model) -> Model:
    cast = lambda ds: [{k: np.asarray(v, dtype=np.longdouble) for k, v in d.items()} for d in ds]
    return Model(model.spec, cast(model.params), cast(model.state), model.frozen)


def gradient_check(model: Model, batch, targets, epsilon: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Dropout is disabled and batch norm uses the statistics of the given batch.
    The finite differences are evaluated in extended precision so that
    float64 cancellation does not swamp near-zero gradients.
    """
    x = _as_batch(batch, model.spec, 0)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    _, cache = forward(model, x, "train", dropout=False)
    analytic = backward(model, cache, targets)

    probe = _extended(model)
    x_ld = x.astype(np.longdouble)
    t_ld = targets.astype(np.longdouble)

    def loss():
        p, _ = forward(probe, x_ld, "train", dropout=False)
        d = p - t_ld
        return np.mean(d * d)

    h = np.longdouble(epsilon)
    worst = 0.0
    for i, p in enumerate(probe.params):
        if not probe.trainable(i):
            continue
        for name, arr in p.items():
            flat = arr.reshape(-1)
            ga = analytic[i][name].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = loss()
                flat[j] = orig - h
                lm = loss()
                flat[j] = orig
                num = float((lp - lm) / (2 * h))
                err = abs(ga[j] - num) / max(abs(ga[j]), abs(num), 1e-8)
                worst = max(worst, err)
    return worst
