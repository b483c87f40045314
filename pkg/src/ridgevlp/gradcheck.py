"""Central finite-difference checks of the model's analytic gradients.

The analytic gradient is computed in float64.  The central difference is
evaluated in extended precision by default: at ``h = 1e-5`` the float64
rounding noise of ``L(x + h) - L(x - h)`` is about ``1e-11`` absolute, which
swamps any gradient component below ``~1e-7`` under a relative tolerance of
``1e-4``.
"""
from dataclasses import dataclass, replace

import numpy as np

from .model import Batch, ModelConfig, loss_and_grads, loss_value

DEFAULT_STEP = 1e-5


@dataclass
class GradCheckResult:
    name: str
    size: int
    max_rel_error: float
    max_abs_error: float
    worst_index: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))


def _cast_batch(batch: Batch, dtype) -> Batch:
    return replace(batch, patches=batch.patches.astype(dtype), target=batch.target.astype(dtype))


def central_difference(params, batch: Batch, cfg: ModelConfig, name: str,
                       h: float = DEFAULT_STEP, dtype=np.longdouble) -> np.ndarray:
    """Numerical gradient of the total loss w.r.t. every entry of ``params[name]``."""
    work = {k: v.astype(dtype) for k, v in params.items()}
    wb = _cast_batch(batch, dtype)
    flat = work[name].reshape(-1)
    out = np.empty(flat.size, dtype=dtype)
    h = dtype(h)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_value(work, wb, cfg)
        flat[i] = orig - h
        fm = loss_value(work, wb, cfg)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.astype(np.float64).reshape(params[name].shape)


def check_gradients(params, batch: Batch, cfg: ModelConfig, names=None,
                    h: float = DEFAULT_STEP, dtype=np.longdouble):
    """Compare analytic and central-difference gradients for each parameter tensor."""
    _, grads, _ = loss_and_grads(params, batch, cfg)
    results = []
    for name in names or sorted(params):
        numeric = central_difference(params, batch, cfg, name, h, dtype)
        analytic = grads[name]
        rel = relative_error(analytic, numeric).reshape(-1)
        absdiff = np.abs(analytic - numeric).reshape(-1)
        worst = int(np.argmax(rel)) if rel.size else 0
        results.append(GradCheckResult(name, int(analytic.size), float(rel.max(initial=0.0)),
                                       float(absdiff.max(initial=0.0)), worst))
    return results
