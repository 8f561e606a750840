from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[dict], grads: list[dict], state: AdamState, lr: float,
              skip=frozenset(), lr_scale=None) -> tuple[list[dict], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``skip`` holds layer indices whose parameters must not move;
    ``lr_scale`` optionally multiplies the step size per layer.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        state.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if i in skip:
            continue
        for k, w in p.items():
            gk = g[k]
            if gk.shape != w.shape:
                raise ValueError(f"gradient shape {gk.shape} != parameter shape {w.shape}")
            m = state.m[i][k]
            v = state.v[i][k]
            m *= state.beta1
            m += (1.0 - state.beta1) * gk
            v *= state.beta2
            v += (1.0 - state.beta2) * gk * gk
            step = lr if lr_scale is None else lr * lr_scale[i]
            w -= step * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def step_decay_lr(epoch: int, lr0: float, drop_factor: float, drop_period: int) -> float:
    """Learning rate for 1-based ``epoch`` under a piecewise-constant drop schedule."""
    return lr0 * drop_factor ** ((epoch - 1) // drop_period)
