"""AdamW and the warmup + cosine learning-rate schedule."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, weight_decay: float,
               decay=None) -> None:
    """One in-place AdamW update with decoupled weight decay.

    ``decay`` optionally names the parameters that receive weight decay
    (default: all of them).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for name in sorted(params):
        if name not in grads:
            continue
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p = params[name]
        if weight_decay and (decay is None or name in decay):
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)


def lr_at(step: int, total: int, peak: float, floor: float, warmup_frac: float) -> float:
    """Linear warmup to ``peak`` over the first ``warmup_frac`` of steps, then cosine to ``floor``.

    ``step`` counts from 0.
    """
    warmup = int(round(warmup_frac * total))
    if warmup and step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, total - warmup - 1)
    progress = min(1.0, (step - warmup) / span)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))
