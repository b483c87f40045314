"""Layers with hand-written backward passes.

Parameters live in a flat ``dict[str, ndarray]``; every layer addresses its
weights by a name prefix.  Forward functions return ``(out, cache)`` and never
keep state, so one layer may run several times per step (masked and unmasked
inputs) with independent caches.  Backward functions take the cache, return
the input gradient(s) and accumulate parameter gradients into ``grads``.
"""
import math

import numpy as np

LN_EPS = 1e-5
NEG_LARGE = -1e30
_GELU_C = math.sqrt(2.0 / math.pi)


def accumulate(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy()


# -- linear ---------------------------------------------------------------

def linear(x, params, name):
    w, b = params[name + ".w"], params[name + ".b"]
    return x @ w + b, x


def linear_backward(dy, cache, params, grads, name):
    x = cache
    w = params[name + ".w"]
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    accumulate(grads, name + ".w", x2.T @ dy2)
    accumulate(grads, name + ".b", dy2.sum(axis=0))
    return dy @ w.T


# -- layer norm -----------------------------------------------------------

def layernorm(x, params, name):
    g, b = params[name + ".g"], params[name + ".b"]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layernorm_backward(dy, cache, params, grads, name):
    xhat, inv = cache
    g = params[name + ".g"]
    n = xhat.shape[-1]
    accumulate(grads, name + ".g", (dy * xhat).reshape(-1, n).sum(axis=0))
    accumulate(grads, name + ".b", dy.reshape(-1, n).sum(axis=0))
    dxhat = dy * g
    return inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))


# -- activations ------------------------------------------------------------

def gelu(x):
    """tanh-approximated GELU."""
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    return 0.5 * x * (1.0 + t), (x, x2, t)


def gelu_backward(dy, cache):
    x, x2, t = cache
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def l2_normalize(x):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / norm, (x / norm, norm)


def l2_normalize_backward(dz, cache):
    z, norm = cache
    return (dz - z * (dz * z).sum(axis=-1, keepdims=True)) / norm


# -- attention --------------------------------------------------------------

def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention(xq, xkv, key_valid, params, name, heads):
    """Multi-head softmax attention of ``xq`` over ``xkv``.

    ``key_valid`` is a ``(batch, keys)`` boolean array or ``None``.
    """
    q, cq = linear(xq, params, name + ".q")
    k, ck = linear(xkv, params, name + ".k")
    v, cv = linear(xkv, params, name + ".v")
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if key_valid is not None:
        s = np.where(key_valid[:, None, None, :], s, NEG_LARGE)
    a = softmax(s)
    o = _merge_heads(a @ vh)
    out, co = linear(o, params, name + ".o")
    return out, (cq, ck, cv, co, qh, kh, vh, a, scale, heads)


def attention_backward(dout, cache, params, grads, name):
    cq, ck, cv, co, qh, kh, vh, a, scale, heads = cache
    do = linear_backward(dout, co, params, grads, name + ".o")
    doh = _split_heads(do, heads)
    da = doh @ vh.transpose(0, 1, 3, 2)
    dvh = a.transpose(0, 1, 3, 2) @ doh
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 1, 3, 2) @ qh
    dxq = linear_backward(_merge_heads(dqh), cq, params, grads, name + ".q")
    dxkv = linear_backward(_merge_heads(dkh), ck, params, grads, name + ".k")
    dxkv = dxkv + linear_backward(_merge_heads(dvh), cv, params, grads, name + ".v")
    return dxq, dxkv


# -- MLP --------------------------------------------------------------------

def mlp(x, params, name):
    h, c1 = linear(x, params, name + ".fc1")
    h, ca = gelu(h)
    y, c2 = linear(h, params, name + ".fc2")
    return y, (c1, ca, c2)


def mlp_backward(dy, cache, params, grads, name):
    c1, ca, c2 = cache
    dh = linear_backward(dy, c2, params, grads, name + ".fc2")
    dh = gelu_backward(dh, ca)
    return linear_backward(dh, c1, params, grads, name + ".fc1")


# -- transformer blocks -----------------------------------------------------

def self_block(x, valid, params, name, heads):
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + mlp(ln(x))``."""
    h, cl1 = layernorm(x, params, name + ".ln1")
    a, ca = attention(h, h, valid, params, name + ".attn", heads)
    x1 = x + a
    h2, cl2 = layernorm(x1, params, name + ".ln2")
    m, cm = mlp(h2, params, name + ".mlp")
    return x1 + m, (cl1, ca, cl2, cm)


def self_block_backward(dy, cache, params, grads, name):
    cl1, ca, cl2, cm = cache
    dh2 = mlp_backward(dy, cm, params, grads, name + ".mlp")
    dx1 = dy + layernorm_backward(dh2, cl2, params, grads, name + ".ln2")
    dq, dkv = attention_backward(dx1, ca, params, grads, name + ".attn")
    return dx1 + layernorm_backward(dq + dkv, cl1, params, grads, name + ".ln1")


def cross_block(x, ctx, ctx_valid, params, name, heads):
    """Pre-norm cross-attention block: queries from ``x``, keys/values from ``ctx``."""
    hq, clq = layernorm(x, params, name + ".ln_q")
    hc, clc = layernorm(ctx, params, name + ".ln_kv")
    a, ca = attention(hq, hc, ctx_valid, params, name + ".attn", heads)
    x1 = x + a
    h2, cl2 = layernorm(x1, params, name + ".ln2")
    m, cm = mlp(h2, params, name + ".mlp")
    return x1 + m, (clq, clc, ca, cl2, cm)


def cross_block_backward(dy, cache, params, grads, name):
    clq, clc, ca, cl2, cm = cache
    dh2 = mlp_backward(dy, cm, params, grads, name + ".mlp")
    dx1 = dy + layernorm_backward(dh2, cl2, params, grads, name + ".ln2")
    dq, dkv = attention_backward(dx1, ca, params, grads, name + ".attn")
    dx = dx1 + layernorm_backward(dq, clq, params, grads, name + ".ln_q")
    dctx = layernorm_backward(dkv, clc, params, grads, name + ".ln_kv")
    return dx, dctx


# -- parameter construction ---------------------------------------------------

def init_linear(params, rng, name, n_in, n_out, std):
    params[name + ".w"] = rng.normal(0.0, std, size=(n_in, n_out))
    params[name + ".b"] = np.zeros(n_out)


def init_layernorm(params, name, d):
    params[name + ".g"] = np.ones(d)
    params[name + ".b"] = np.zeros(d)


def init_attention(params, rng, name, d, std):
    for part in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.{part}", d, d, std)


def init_mlp(params, rng, name, d, hidden, std):
    init_linear(params, rng, name + ".fc1", d, hidden, std)
    init_linear(params, rng, name + ".fc2", hidden, d, std)


def init_self_block(params, rng, name, d, hidden, std):
    init_layernorm(params, name + ".ln1", d)
    init_attention(params, rng, name + ".attn", d, std)
    init_layernorm(params, name + ".ln2", d)
    init_mlp(params, rng, name + ".mlp", d, hidden, std)


def init_cross_block(params, rng, name, d, hidden, std):
    init_layernorm(params, name + ".ln_q", d)
    init_layernorm(params, name + ".ln_kv", d)
    init_attention(params, rng, name + ".attn", d, std)
    init_layernorm(params, name + ".ln2", d)
    init_mlp(params, rng, name + ".mlp", d, hidden, std)
