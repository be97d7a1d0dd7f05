"""Neural-network primitives with hand-derived reverse-mode gradients.

All tensors are channels-last numpy arrays; every forward returns (y, cache)
and the matching backward consumes (cache, dy).  All ops are smooth (SiLU,
LayerNorm, softmax), so central finite differences validate the gradients to
high precision in float64.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear_forward(x, w, b=None):
    """x (..., d_in) @ w (d_in, d_out) + b."""
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def linear_backward(cache, dy):
    x, w, has_bias = cache
    d_in = w.shape[0]
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, w.shape[1])
    dw = x2.T @ dy2
    db = dy2.sum(0) if has_bias else None
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# convolutions (im2col over the spatial axes)
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b, stride=1):
    """x (B, H, W, C), w (k, k, C, C_out) with zero padding (k-1)//2."""
    k = w.shape[0]
    pad = (k - 1) // 2
    bsz, h, wd, c = x.shape
    if pad:
        xp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, c), x.dtype)
        xp[:, pad:pad + h, pad:pad + wd, :] = x
    else:
        xp = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    slots = []
    for i in range(k):
        for j in range(k):
            slots.append(xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :])
    cols = np.concatenate(slots, axis=3)
    c_out = w.shape[3]
    y = cols.reshape(-1, k * k * c) @ w.reshape(k * k * c, c_out)
    y = y.reshape(bsz, ho, wo, c_out) + b
    return y, (cols, x.shape, stride, k, pad)


def conv2d_backward(w, cache, dy):
    cols, xshape, stride, k, pad = cache
    bsz, h, wd, c = xshape
    c_out = w.shape[3]
    dy2 = dy.reshape(-1, c_out)
    dw = (cols.reshape(-1, k * k * c).T @ dy2).reshape(w.shape)
    db = dy2.sum(0)
    dcols = (dy2 @ w.reshape(k * k * c, c_out).T).reshape(dy.shape[:3] + (k * k * c,))
    ho, wo = dy.shape[1:3]
    dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, c), dy.dtype)
    slot = 0
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                dcols[..., slot * c:(slot + 1) * c]
            slot += 1
    dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
    return dx, dw, db


def conv1d_forward(x, w, b, stride=1):
    """x (B, L, C), w (k, C, C_out) with zero padding (k-1)//2."""
    k = w.shape[0]
    pad = (k - 1) // 2
    bsz, ln, c = x.shape
    if pad:
        xp = np.zeros((bsz, ln + 2 * pad, c), x.dtype)
        xp[:, pad:pad + ln, :] = x
    else:
        xp = x
    lo = (ln + 2 * pad - k) // stride + 1
    slots = [xp[:, i:i + stride * lo:stride, :] for i in range(k)]
    cols = np.concatenate(slots, axis=2)
    c_out = w.shape[2]
    y = cols.reshape(-1, k * c) @ w.reshape(k * c, c_out)
    y = y.reshape(bsz, lo, c_out) + b
    return y, (cols, x.shape, stride, k, pad)


def conv1d_backward(w, cache, dy):
    cols, xshape, stride, k, pad = cache
    bsz, ln, c = xshape
    c_out = w.shape[2]
    dy2 = dy.reshape(-1, c_out)
    dw = (cols.reshape(-1, k * c).T @ dy2).reshape(w.shape)
    db = dy2.sum(0)
    dcols = (dy2 @ w.reshape(k * c, c_out).T).reshape(dy.shape[:2] + (k * c,))
    lo = dy.shape[1]
    dxp = np.zeros((bsz, ln + 2 * pad, c), dy.dtype)
    for i in range(k):
        dxp[:, i:i + stride * lo:stride, :] += dcols[..., i * c:(i + 1) * c]
    dx = dxp[:, pad:pad + ln, :] if pad else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# normalization and activation
# ---------------------------------------------------------------------------

def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * invstd
    return xhat * gamma + beta, (xhat, invstd, gamma)


def layernorm_backward(cache, dy):
    xhat, invstd, gamma = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axes)
    dbeta = dy.sum(axes)
    dxhat = dy * gamma
    dx = invstd * (dxhat - dxhat.mean(-1, keepdims=True)
                   - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgamma, dbeta


def silu_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(cache, dy):
    x, s = cache
    return dy * (s * (1.0 + x * (1.0 - s)))


# ---------------------------------------------------------------------------
# single-head cross-attention
# ---------------------------------------------------------------------------

def attention_forward(xq, ctx, wq, wk, wv, wo):
    """Queries from xq (B, Lq, d_q), keys/values from ctx (B, Lk, d_kv);
    returns (B, Lq, d_q) after the output projection."""
    scale = 1.0 / np.sqrt(wq.shape[1])
    q = xq @ wq
    k = ctx @ wk
    v = ctx @ wv
    scores = np.einsum("bqa,bka->bqk", q, k) * scale
    scores = scores - scores.max(-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(-1, keepdims=True)
    mix = np.einsum("bqk,bka->bqa", attn, v)
    y = mix @ wo
    return y, (xq, ctx, q, k, v, attn, mix, wq, wk, wv, wo, scale)


def attention_backward(cache, dy):
    xq, ctx, q, k, v, attn, mix, wq, wk, wv, wo, scale = cache
    d_attn = wq.shape[1]
    dwo = mix.reshape(-1, d_attn).T @ dy.reshape(-1, wo.shape[1])
    dmix = dy @ wo.T
    dattn = np.einsum("bqa,bka->bqk", dmix, v)
    dv = np.einsum("bqk,bqa->bka", attn, dmix)
    ds = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
    dq = np.einsum("bqk,bka->bqa", ds, k) * scale
    dk = np.einsum("bqk,bqa->bka", ds, q) * scale
    dwq = xq.reshape(-1, xq.shape[-1]).T @ dq.reshape(-1, d_attn)
    dwk = ctx.reshape(-1, ctx.shape[-1]).T @ dk.reshape(-1, d_attn)
    dwv = ctx.reshape(-1, ctx.shape[-1]).T @ dv.reshape(-1, d_attn)
    dxq = dq @ wq.T
    dctx = dk @ wk.T + dv @ wv.T
    return dxq, dctx, dwq, dwk, dwv, dwo


# ---------------------------------------------------------------------------
# resampling and embeddings
# ---------------------------------------------------------------------------

def upsample1d_forward(x):
    """Nearest-neighbor x2 along the sequence axis."""
    return np.repeat(x, 2, axis=1), x.shape


def upsample1d_backward(_shape, dy):
    return dy[:, 0::2, :] + dy[:, 1::2, :]


def time_embedding(t, dim):
    """Sinusoidal embedding of t in [0, 1] with log-spaced frequencies."""
    half = dim // 2
    freqs = np.exp(np.linspace(np.log(1.0), np.log(200.0), half))
    ang = np.asarray(t, np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
