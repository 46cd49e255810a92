import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StateError


@dataclass
class OptimizerState:
    """Adam state. Moments are keyed by parameter name and created on first update."""

    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def _param_key(p, i):
    return p.name if p.name is not None else f"param_{i}"


def optimizer_step(params, state):
    """One bias-corrected Adam update, in place on ``params``.

    Updates are computed in float64 and written back in each parameter's
    storage dtype. Gradients are left untouched; the caller zeroes them.
    """
    keyed = [(_param_key(p, i), p) for i, p in enumerate(params)]
    for key, p in keyed:
        if p.grad is None:
            raise StateError(f"parameter {key!r} has no gradient; run backward() before optimizer_step")

    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    step_size = state.lr / bc1
    sqrt_bc2 = math.sqrt(bc2)
    for key, p in keyed:
        g = p.grad
        m = state.exp_avg.get(key)
        if m is None:
            m = state.exp_avg[key] = np.zeros(p.shape, dtype=np.float64)
            state.exp_avg_sq[key] = np.zeros(p.shape, dtype=np.float64)
        v = state.exp_avg_sq[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v) / sqrt_bc2 + state.eps
        updated = p.data.astype(np.float64) - step_size * m / denom
        p.data = updated.astype(p.data.dtype, copy=False)
    return state


def lr_schedule(epoch, total_epochs, initial_lr, milestones=(0.5, 0.8, 0.9, 0.96)):
    """Step schedule: halve the rate at each milestone fraction of training.

    >>> lr_schedule(13, 25, 2e-4)
    0.0001
    """
    prev = 0.0
    for m in milestones:
        if not prev < m <= 1.0:
            raise ValueError(f"milestones must be strictly increasing in (0, 1], got {list(milestones)}")
        prev = m
    # the small slack keeps e.g. 0.8 * 25 from landing on 20.000000000000004
    passed = sum(1 for m in milestones if epoch >= math.ceil(m * total_epochs - 1e-9))
    return initial_lr * 0.5**passed
