"""Adam with bias correction, and the warmup + reduce-on-plateau schedule."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PLATEAU_MIN_DELTA = 1e-4


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, registry):
        self.m = {name: np.zeros_like(t.data) for name, t in registry.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in registry.items()}
        self.t = 0


def adam_step(registry, state: AdamState, lr,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One in-place Adam update from each parameter's .grad buffer."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in registry.items():
        g = p.grad
        if g is None:
            raise ValidationError(f"parameter {name!r} has no gradient")
        if g.shape != p.data.shape:
            raise ShapeError(f"parameter {name!r}: grad shape {g.shape} != {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_schedule(epoch, val_losses, cfg):
    """Learning rate for `epoch`, given completed epochs' validation losses.

    Linear warmup from lr/100 to lr over warmup_epochs, then multiply by
    plateau_factor whenever val loss has not improved by >= 1e-4 for more
    than plateau_patience epochs, flooring at min_lr.
    """
    if epoch < cfg.warmup_epochs:
        lo = cfg.lr / 100.0
        return lo + (cfg.lr - lo) * (epoch / cfg.warmup_epochs)
    scale = 1.0
    best = float("inf")
    wait = 0
    for e in range(cfg.warmup_epochs, min(epoch, len(val_losses))):
        if val_losses[e] < best - PLATEAU_MIN_DELTA:
            best = val_losses[e]
            wait = 0
        else:
            wait += 1
            if wait > cfg.plateau_patience:
                scale *= cfg.plateau_factor
                wait = 0
    return max(cfg.lr * scale, cfg.min_lr)
