"""SGD with momentum and L2 weight decay, and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch, StepOutOfRange


def sgd_step(params: dict, grads: dict, lr: float, state: dict | None = None, momentum: float = 0.5,
             weight_decay: float = 5e-4) -> tuple[dict, dict]:
    """v <- momentum*v + (g + wd*p);  p <- p - lr*v.  Returns new (params, velocity)."""
    if set(params) != set(grads):
        raise ShapeMismatch("parameter and gradient names differ")
    state = state or {}
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        v = state.get(name)
        step = g + weight_decay * p if weight_decay else g.copy()
        v = step if v is None else momentum * v + step
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


def clip_grad_norm(grads: dict, max_norm: float | None) -> tuple[dict, float]:
    """Scale all gradients by a common factor so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def one_cycle_lr(step: int, total_steps: int, max_lr: float, div: float = 25.0, pct_start: float = 0.3,
                 final_div: float = 1e4) -> float:
    """Linear warm-up from max_lr/div to max_lr, then cosine decay to max_lr/(div*final_div)."""
    if not 0 <= step < total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps})")
    start = max_lr / div
    end = max_lr / (div * final_div)
    peak = int(math.floor(pct_start * total_steps + 1e-9))
    if step <= peak:
        return max_lr if peak == 0 else start + (max_lr - start) * step / peak
    frac = (step - peak) / (total_steps - 1 - peak)
    return end + (max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))
