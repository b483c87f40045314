"""Two-stream masked vision-language model with explicit backward.

Components (all parameter names are prefixed accordingly):

``f_im`` / ``f_txt``
    image and text transformer encoders; the image stream prepends a class
    token, the text stream starts with the START token.
``g_im`` / ``g_txt``
    cross-modality encoders: image queries attend over text features and
    vice versa.
``d_im`` / ``d_txt``
    linear decoders to patch pixels and vocabulary logits.
``proj_im`` / ``proj_txt``, ``log_tau``
    contrastive projection heads and the log temperature.
``itm``
    2-way matching head.

One training step encodes the masked and the unmasked version of every image
and text.  Masked images are reconstructed with the unmasked text as context,
masked text with the unmasked image.  The contrastive loss uses the class and
start features of the unmasked inputs; the matching loss runs the cross
encoders on matched pairs and on in-batch negatives.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import nn
from . import objectives as obj
from . import rng as rngmod
from .errors import ConfigurationError, DimensionError, UsageError
from .text import MASK, PAD

TAU_FLOOR = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_patches: int = 16
    patch_dim: int = 64
    max_len: int = 64
    d: int = 64
    d_proj: int = 32
    blocks: int = 2
    cross_blocks: int = 1
    heads: int = 4
    mlp_ratio: int = 4
    init_std: float = 0.05
    tau_init: float = 0.07

    def __post_init__(self):
        if self.d % self.heads:
            raise DimensionError(f"width {self.d} is not divisible by {self.heads} heads")

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Model inputs for one step.

    ``patches``/``target`` are ``(B, P, patch_dim)``; ``patch_mask`` is
    ``(B, P)``; ``ids`` and ``ids_masked`` are ``(B, L)`` token ids and
    ``text_mask`` marks the masked positions.  ``neg_index[i]`` is the sample
    whose text serves as the mismatched partner of image ``i``.
    """
    patches: np.ndarray
    target: np.ndarray
    patch_mask: np.ndarray
    ids: np.ndarray
    ids_masked: np.ndarray
    text_mask: np.ndarray
    neg_index: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.patches.shape[0]


@dataclass
class ForwardTrace:
    caches: dict = field(default_factory=dict)
    text_logits: np.ndarray = None
    image_recon: np.ndarray = None
    z_im: np.ndarray = None
    z_txt: np.ndarray = None
    z_cross_im: np.ndarray = None
    z_cross_txt: np.ndarray = None
    tau: float = None
    tau_clamped: bool = False
    batch: Batch = None


def init_params(cfg: ModelConfig, seed: int) -> dict:
    g = rngmod.generator(seed, "init")
    std = cfg.init_std
    d, hidden = cfg.d, cfg.d * cfg.mlp_ratio
    p = {}
    nn.init_linear(p, g, "f_im.patch_embed", cfg.patch_dim, d, std)
    p["f_im.cls"] = g.normal(0.0, std, size=d)
    p["f_im.mask_embed"] = g.normal(0.0, std, size=d)
    p["f_im.pos"] = g.normal(0.0, std, size=(cfg.num_patches + 1, d))
    p["f_txt.token_embed"] = g.normal(0.0, std, size=(cfg.vocab_size, d))
    p["f_txt.pos"] = g.normal(0.0, std, size=(cfg.max_len, d))
    for enc in ("f_im", "f_txt"):
        for i in range(cfg.blocks):
            nn.init_self_block(p, g, f"{enc}.blocks.{i}", d, hidden, std)
        nn.init_layernorm(p, f"{enc}.ln_out", d)
    for enc in ("g_im", "g_txt"):
        for i in range(cfg.cross_blocks):
            nn.init_cross_block(p, g, f"{enc}.blocks.{i}", d, hidden, std)
        nn.init_layernorm(p, f"{enc}.ln_out", d)
    nn.init_linear(p, g, "d_im", d, cfg.patch_dim, std)
    nn.init_linear(p, g, "d_txt", d, cfg.vocab_size, std)
    nn.init_linear(p, g, "proj_im", d, cfg.d_proj, std)
    nn.init_linear(p, g, "proj_txt", d, cfg.d_proj, std)
    nn.init_linear(p, g, "itm", d, 2, std)
    p["log_tau"] = np.array(math.log(cfg.tau_init))
    return p


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.asarray(params[k], dtype="<f8", order="C").tobytes())
    return h.hexdigest()


def temperature(params: dict):
    """``(tau, clamped)``; ``tau = exp(log_tau)`` floored at ``TAU_FLOOR``."""
    log_tau = params["log_tau"]
    floor = math.log(TAU_FLOOR)
    return np.exp(np.maximum(log_tau, floor)), bool(log_tau < floor)


# -- encoders ---------------------------------------------------------------

def _run_blocks(x, valid, params, prefix, n, heads):
    caches = []
    for i in range(n):
        x, c = nn.self_block(x, valid, params, f"{prefix}.blocks.{i}", heads)
        caches.append(c)
    x, c = nn.layernorm(x, params, f"{prefix}.ln_out")
    return x, (caches, c)


def _run_blocks_backward(dx, cache, params, grads, prefix):
    caches, c = cache
    dx = nn.layernorm_backward(dx, c, params, grads, f"{prefix}.ln_out")
    for i in reversed(range(len(caches))):
        dx = nn.self_block_backward(dx, caches[i], params, grads, f"{prefix}.blocks.{i}")
    return dx


def encode_image(patches, patch_mask, params, cfg: ModelConfig):
    """Image features ``(B, P + 1, d)``; row 0 is the class token.

    Masked patches are replaced by the learned mask embedding before the
    positional table is added.
    """
    patches = np.asarray(patches, dtype=params["f_im.patch_embed.w"].dtype)
    if patches.ndim == 2:
        out, cache = encode_image(patches[None], None if patch_mask is None
                                  else np.asarray(patch_mask)[None], params, cfg)
        return out[0], cache
    b, n, pd = patches.shape
    if (n, pd) != (cfg.num_patches, cfg.patch_dim):
        raise DimensionError(f"expected patches ({cfg.num_patches}, {cfg.patch_dim}), got ({n}, {pd})")
    if patch_mask is None:
        patch_mask = np.zeros((b, n), dtype=bool)
    patch_mask = np.asarray(patch_mask, dtype=bool)
    emb, c_pe = nn.linear(patches, params, "f_im.patch_embed")
    emb = np.where(patch_mask[..., None], params["f_im.mask_embed"], emb)
    cls = np.broadcast_to(params["f_im.cls"], (b, 1, cfg.d))
    x = np.concatenate([cls, emb], axis=1) + params["f_im.pos"]
    x, c_blocks = _run_blocks(x, None, params, "f_im", cfg.blocks, cfg.heads)
    return x, (c_pe, patch_mask, c_blocks)


def encode_image_backward(dx, cache, params, grads):
    c_pe, patch_mask, c_blocks = cache
    dx = _run_blocks_backward(dx, c_blocks, params, grads, "f_im")
    nn.accumulate(grads, "f_im.pos", dx.sum(axis=0))
    nn.accumulate(grads, "f_im.cls", dx[:, 0].sum(axis=0))
    demb = dx[:, 1:]
    nn.accumulate(grads, "f_im.mask_embed", demb[patch_mask].sum(axis=0))
    demb = np.where(patch_mask[..., None], 0.0, demb)
    nn.linear_backward(demb, c_pe, params, grads, "f_im.patch_embed")


def encode_text(ids, params, cfg: ModelConfig):
    """Text features ``(B, L, d)``; row 0 is the START token.

    ``ids`` should already have masked positions replaced by MASK; see
    :func:`mask_token_ids`.  PAD positions are excluded as attention keys.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        out, cache = encode_text(ids[None], params, cfg)
        return out[0], cache
    b, length = ids.shape
    if length > cfg.max_len:
        raise DimensionError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    valid = ids != PAD
    x = params["f_txt.token_embed"][ids] + params["f_txt.pos"][:length]
    x, c_blocks = _run_blocks(x, valid, params, "f_txt", cfg.blocks, cfg.heads)
    return x, (ids, c_blocks)


def encode_text_backward(dx, cache, params, grads):
    ids, c_blocks = cache
    dx = _run_blocks_backward(dx, c_blocks, params, grads, "f_txt")
    length = ids.shape[1]
    dpos = np.zeros_like(params["f_txt.pos"])
    dpos[:length] = dx.sum(axis=0)
    nn.accumulate(grads, "f_txt.pos", dpos)
    demb = np.zeros_like(params["f_txt.token_embed"])
    np.add.at(demb, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    nn.accumulate(grads, "f_txt.token_embed", demb)


def mask_token_ids(ids, text_mask):
    return np.where(np.asarray(text_mask, dtype=bool), MASK, ids)


def cross_encode(query, context, context_valid, params, cfg: ModelConfig, direction: str):
    """Fuse ``query`` features with ``context`` features.

    ``direction='im'`` runs the image-query encoder, ``'txt'`` the text-query
    one.
    """
    if direction not in ("im", "txt"):
        raise ConfigurationError(f"direction must be 'im' or 'txt', got {direction!r}")
    if query.shape[-1] != cfg.d or context.shape[-1] != cfg.d:
        raise DimensionError("query and context widths must equal the model width")
    prefix = f"g_{direction}"
    caches = []
    x = query
    for i in range(cfg.cross_blocks):
        x, c = nn.cross_block(x, context, context_valid, params, f"{prefix}.blocks.{i}", cfg.heads)
        caches.append(c)
    x, c = nn.layernorm(x, params, f"{prefix}.ln_out")
    return x, (caches, c, prefix)


def cross_encode_backward(dx, cache, params, grads):
    caches, c, prefix = cache
    dx = nn.layernorm_backward(dx, c, params, grads, f"{prefix}.ln_out")
    dctx = 0.0
    for i in reversed(range(len(caches))):
        dx, dc = nn.cross_block_backward(dx, caches[i], params, grads, f"{prefix}.blocks.{i}")
        dctx = dctx + dc
    return dx, dctx


def project(features, params, name):
    """Class/start feature -> unit embedding for the contrastive loss."""
    h, c_lin = nn.linear(features, params, name)
    z, c_norm = nn.l2_normalize(h)
    return z, (c_lin, c_norm)


def project_backward(dz, cache, params, grads, name):
    c_lin, c_norm = cache
    return nn.linear_backward(nn.l2_normalize_backward(dz, c_norm), c_lin, params, grads, name)


# -- full step ----------------------------------------------------------------

def forward(params, batch: Batch, cfg: ModelConfig) -> ForwardTrace:
    b = batch.size
    tr = ForwardTrace(batch=batch)
    c = tr.caches

    # masked and unmasked copies share one encoder call
    im_in = np.concatenate([batch.patches, batch.patches])
    im_mask = np.concatenate([batch.patch_mask, np.zeros_like(batch.patch_mask)])
    f_im, c["f_im"] = encode_image(im_in, im_mask, params, cfg)
    txt_in = np.concatenate([batch.ids_masked, batch.ids])
    f_txt, c["f_txt"] = encode_text(txt_in, params, cfg)
    im_m, im_full = f_im[:b], f_im[b:]
    txt_m, txt_full = f_txt[:b], f_txt[b:]
    txt_valid = batch.ids != PAD

    # reconstruction: every query position is decoded
    g_im, c["g_im"] = cross_encode(im_m, txt_full, txt_valid, params, cfg, "im")
    g_txt, c["g_txt"] = cross_encode(txt_m, im_full, None, params, cfg, "txt")
    tr.image_recon, c["d_im"] = nn.linear(g_im[:, 1:], params, "d_im")
    tr.text_logits, c["d_txt"] = nn.linear(g_txt, params, "d_txt")

    # matching: queries never attend to each other inside the cross encoders,
    # so the class/start output only needs the class/start query
    neg = batch.neg_index
    if neg is not None:
        q_im = np.concatenate([im_full[:, :1], im_full[:, :1]])
        ctx_im = np.concatenate([txt_full, txt_full[neg]])
        ctx_im_valid = np.concatenate([txt_valid, txt_valid[neg]])
        q_txt = np.concatenate([txt_full[:, :1], txt_full[neg, :1]])
        ctx_txt = np.concatenate([im_full, im_full])
        m_im, c["g_im_itm"] = cross_encode(q_im, ctx_im, ctx_im_valid, params, cfg, "im")
        m_txt, c["g_txt_itm"] = cross_encode(q_txt, ctx_txt, None, params, cfg, "txt")
        tr.z_cross_im = m_im[:, 0]
        tr.z_cross_txt = m_txt[:, 0]

    tr.z_im, c["proj_im"] = project(im_full[:, 0], params, "proj_im")
    tr.z_txt, c["proj_txt"] = project(txt_full[:, 0], params, "proj_txt")
    tr.tau, tr.tau_clamped = temperature(params)
    return tr


def losses(trace: ForwardTrace, params):
    """Evaluate all objectives; returns ``(LossReport, loss_grads)``."""
    bt = trace.batch
    text, image, omega, dlogits, drecon = obj.mvlm_loss(
        trace.text_logits, bt.ids, bt.text_mask, trace.image_recon, bt.target, bt.patch_mask)
    itc, dz_im, dz_txt, dtau = obj.itc_loss(trace.z_im, trace.z_txt, trace.tau)
    lg = {"text_logits": dlogits, "image_recon": drecon, "z_im": dz_im, "z_txt": dz_txt,
          "tau": dtau}
    itm = None
    if bt.neg_index is not None:
        b = bt.size
        labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(b, dtype=np.int64)])
        itm, g = obj.itm_loss(trace.z_cross_im, trace.z_cross_txt, labels,
                              params["itm.w"], params["itm.b"])
        lg["z_cross_im"] = g["z_cross_im"]
        lg["z_cross_txt"] = g["z_cross_txt"]
        lg["itm.w"] = g["w"]
        lg["itm.b"] = g["b"]
    return obj.total_loss(text, image, itc, itm, omega), lg


def backward(trace: Optional[ForwardTrace], loss_grads: dict, params, cfg: ModelConfig) -> dict:
    """Parameter gradients given gradients of the loss w.r.t. model outputs."""
    if trace is None or not trace.caches:
        raise UsageError("backward needs the trace of a forward pass")
    c = trace.caches
    bt = trace.batch
    b = bt.size
    grads = zeros_like_params(params)

    if "itm.w" in loss_grads:
        grads["itm.w"] += loss_grads["itm.w"]
        grads["itm.b"] += loss_grads["itm.b"]
    grads["log_tau"] += 0.0 if trace.tau_clamped else float(loss_grads["tau"] * trace.tau)

    d_im_full = np.zeros((b, cfg.num_patches + 1, cfg.d))
    d_txt_full = np.zeros((b, bt.ids.shape[1], cfg.d))
    d_im_full[:, 0] += project_backward(loss_grads["z_im"], c["proj_im"], params, grads, "proj_im")
    d_txt_full[:, 0] += project_backward(loss_grads["z_txt"], c["proj_txt"], params, grads, "proj_txt")

    dg_im = np.zeros((b, cfg.num_patches + 1, cfg.d))
    dg_im[:, 1:] = nn.linear_backward(loss_grads["image_recon"], c["d_im"], params, grads, "d_im")
    dg_txt = nn.linear_backward(loss_grads["text_logits"], c["d_txt"], params, grads, "d_txt")
    d_im_m, dctx = cross_encode_backward(dg_im, c["g_im"], params, grads)
    d_txt_full += dctx
    d_txt_m, dctx = cross_encode_backward(dg_txt, c["g_txt"], params, grads)
    d_im_full += dctx

    neg = bt.neg_index
    if neg is not None:
        dq, dctx = cross_encode_backward(loss_grads["z_cross_im"][:, None], c["g_im_itm"],
                                         params, grads)
        d_im_full[:, :1] += dq[:b] + dq[b:]
        d_txt_full += dctx[:b]
        np.add.at(d_txt_full, neg, dctx[b:])
        dq, dctx = cross_encode_backward(loss_grads["z_cross_txt"][:, None], c["g_txt_itm"],
                                         params, grads)
        d_txt_full[:, :1] += dq[:b]
        np.add.at(d_txt_full[:, :1], neg, dq[b:])
        d_im_full += dctx[:b] + dctx[b:]

    encode_image_backward(np.concatenate([d_im_m, d_im_full]), c["f_im"], params, grads)
    encode_text_backward(np.concatenate([d_txt_m, d_txt_full]), c["f_txt"], params, grads)
    return grads


def loss_and_grads(params, batch: Batch, cfg: ModelConfig):
    trace = forward(params, batch, cfg)
    report, lg = losses(trace, params)
    return report, backward(trace, lg, params, cfg), trace


def loss_value(params, batch: Batch, cfg: ModelConfig):
    """Total loss without gradients, in the dtype of ``params``.

    Used by finite-difference checks, which may run in extended precision.
    """
    tr = forward(params, batch, cfg)
    text, image, _, _, _ = obj.mvlm_loss(
        tr.text_logits, batch.ids, batch.text_mask, tr.image_recon, batch.target, batch.patch_mask)
    total = text + image + obj.itc_loss(tr.z_im, tr.z_txt, tr.tau)[0]
    if batch.neg_index is not None:
        b = batch.size
        labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(b, dtype=np.int64)])
        total = total + obj.itm_loss(tr.z_cross_im, tr.z_cross_txt, labels,
                                     params["itm.w"], params["itm.b"])[0]
    return total


def embed(params, cfg: ModelConfig, patches, ids, chunk: int = 64):
    """Unit contrastive embeddings of unmasked images and texts."""
    z_im, z_txt = [], []
    for s in range(0, len(patches), chunk):
        f_im, _ = encode_image(patches[s:s + chunk], None, params, cfg)
        z_im.append(project(f_im[:, 0], params, "proj_im")[0])
        f_txt, _ = encode_text(ids[s:s + chunk], params, cfg)
        z_txt.append(project(f_txt[:, 0], params, "proj_txt")[0])
    return np.concatenate(z_im), np.concatenate(z_txt)


def config_json(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
