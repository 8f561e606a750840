"""From-scratch CNN regression: layers, the three network types, Adam training and fine-tuning."""
from .layers import (BatchNorm, Conv2D, Dropout, FullyConnected, Input, MaxPool, RegressionOutput,
                     ReLU, Sigmoid)
from .model import (Model, ModelSpec, StaleCacheError, TrainedModel, backward, build_type, forward,
                    gradient_check, init_model, mse)
from .optim import AdamState, adam_step, step_decay_lr
from .train import (DivergenceError, TrainConfig, finetune, layer_lr_scales, normalize_positions, predict,
                    predict_position, train)

__all__ = [
    "BatchNorm", "Conv2D", "Dropout", "FullyConnected", "Input", "MaxPool", "RegressionOutput", "ReLU",
    "Sigmoid", "Model", "ModelSpec", "StaleCacheError", "TrainedModel", "backward", "build_type", "forward",
    "gradient_check", "init_model", "mse", "AdamState", "adam_step", "step_decay_lr", "DivergenceError",
    "TrainConfig", "finetune", "layer_lr_scales", "normalize_positions", "predict", "predict_position", "train",
]
