"""Pre-training losses with analytic gradients.

* masked reconstruction: cross-entropy on masked text tokens plus an L1 term
  on masked image patches normalized by the number of masked pixels,
* symmetric image-text contrastive loss (both directions under one 1/N),
* image-text matching: a 2-way classifier on the element-wise product of the
  fused image and text features,

and their unit-weight sum.
"""
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import DegenerateBatchError, DomainError
from .nn import log_softmax, softmax


@dataclass
class LossReport:
    mvlm_text: float
    mvlm_image: float
    itc: float
    itm: Optional[float]
    total: float
    masked_pixel_count: int
    itm_skipped: bool = False

    def to_json(self, step: int, tau: float) -> str:
        row = {
            "step": int(step),
            "mvlm_text": self.mvlm_text,
            "mvlm_image": self.mvlm_image,
            "itc": self.itc,
            "itm": self.itm,
            "total": self.total,
            "tau": float(tau),
        }
        return json.dumps(row)

    def as_dict(self) -> dict:
        return asdict(self)


def cross_entropy_masked(logits, targets, mask):
    """Mean cross-entropy over the positions where ``mask`` is set.

    Returns ``(loss, dlogits)``; an empty mask gives zero loss and gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    dlogits = np.zeros_like(logits)
    count = int(mask.sum())
    if count == 0:
        return logits.dtype.type(0), dlogits
    sel = logits[mask]
    tgt = np.asarray(targets)[mask]
    logp = log_softmax(sel)
    rows = np.arange(count)
    loss = -logp[rows, tgt].sum() / count
    d = np.exp(logp)
    d[rows, tgt] -= 1.0
    dlogits[mask] = d / count
    return loss, dlogits


def masked_l1(recon, target, patch_mask):
    """``sum |target - recon|`` over masked patches divided by masked pixel count.

    Returns ``(loss, drecon, omega)``.  The subgradient at ``recon == target``
    is zero.
    """
    patch_mask = np.asarray(patch_mask, dtype=bool)
    drecon = np.zeros_like(recon)
    omega = int(patch_mask.sum()) * recon.shape[-1]
    if omega == 0:
        return recon.dtype.type(0), drecon, 0
    diff = target[patch_mask] - recon[patch_mask]
    loss = np.abs(diff).sum() / omega
    drecon[patch_mask] = -np.sign(diff) / omega
    return loss, drecon, omega


def mvlm_loss(text_logits, text_targets, token_mask, image_recon, image_target, patch_mask):
    """Joint masked reconstruction loss.

    Returns ``(text_term, image_term, omega, dlogits, drecon)``.
    """
    token_mask = np.asarray(token_mask, dtype=bool)
    patch_mask = np.asarray(patch_mask, dtype=bool)
    if not token_mask.any() and not patch_mask.any():
        raise DegenerateBatchError("neither text tokens nor image patches are masked")
    text, dlogits = cross_entropy_masked(text_logits, text_targets, token_mask)
    image, drecon, omega = masked_l1(image_recon, image_target, patch_mask)
    return text, image, omega, dlogits, drecon


def itc_loss(z_im, z_txt, tau):
    """Symmetric contrastive loss over a batch of unit embeddings.

    Returns ``(loss, dz_im, dz_txt, dtau)``.
    """
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    n = z_im.shape[0]
    sim = (z_im @ z_txt.T) / tau
    # image-to-text: row k over candidates n; text-to-image: column k over n
    log_row = log_softmax(sim, axis=1)
    log_col = log_softmax(sim, axis=0)
    diag = np.arange(n)
    loss = -(log_col[diag, diag].sum() + log_row[diag, diag].sum()) / n
    dsim = (np.exp(log_row) + np.exp(log_col)) / n
    dsim[diag, diag] -= 2.0 / n
    dz_im = dsim @ z_txt / tau
    dz_txt = dsim.T @ z_im / tau
    dtau = -(dsim * sim).sum() / tau
    return loss, dz_im, dz_txt, dtau


def itm_loss(z_cross_im, z_cross_txt, labels, head_w, head_b):
    """2-way matching loss on ``z_cross_im * z_cross_txt``; label 1 = matched.

    Returns ``(loss, grads)`` with grads keyed ``z_cross_im``,
    ``z_cross_txt``, ``w`` and ``b``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    h = z_cross_im * z_cross_txt
    logits = h @ head_w + head_b
    n = len(labels)
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].sum() / n
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    dh = dlogits @ head_w.T
    grads = {
        "z_cross_im": dh * z_cross_txt,
        "z_cross_txt": dh * z_cross_im,
        "w": h.T @ dlogits,
        "b": dlogits.sum(axis=0),
    }
    return loss, grads


def negative_pairing(batch_size: int, seed: int, stream=("itm",)):
    """Index of a uniformly drawn other sample for every sample, or ``None`` for a batch of 1."""
    if batch_size < 2:
        return None
    g = rngmod.generator(seed, *stream)
    draw = g.integers(0, batch_size - 1, size=batch_size)
    own = np.arange(batch_size)
    return draw + (draw >= own)


def total_loss(mvlm_text, mvlm_image, itc, itm=None, masked_pixel_count=0) -> LossReport:
    total = mvlm_text + mvlm_image + itc + (itm if itm is not None else 0.0)
    return LossReport(float(mvlm_text), float(mvlm_image), float(itc),
                      None if itm is None else float(itm), float(total),
                      int(masked_pixel_count), itm is None)
