"""Bidirectional transformer encoder with dual heads, forward and backward.

All math is plain numpy in the dtype the config selects. The backward pass is
written by hand and is checked against central finite differences.
"""
from __future__ import annotations

import numpy as np

from .sre import polar_batch

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_K = 0.044715


class NonFiniteActivation(FloatingPointError):
    pass


class ShapeMismatch(ValueError):
    pass


def _gelu(x):
    inner = _GELU_C * (x + _GELU_K * x * x * x)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)

def _layer_norm_bwd(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _mm_grad(x3, dy3):
    """Weight gradient of y = x @ w for (B, T, .) operands."""
    return x3.reshape(-1, x3.shape[-1]).T @ dy3.reshape(-1, dy3.shape[-1])


def forward_batch(params, tokens, xy, sre_mask, want_cache=False):
    """Batched forward pass.

    tokens: (B, 256) ints; xy: (B, 256, 2) raw coordinate inputs; sre_mask:
    (B, 256) bools selecting positions that receive a position encoding.
    Returns (fast_logits (B, 5), slow_logits (B, 256, V)[, cache]).
    """
    cfg = params.config
    dt = cfg.np_dtype
    p = params.tensors
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != cfg.seq_len:
        raise ShapeMismatch(f"tokens shape {tokens.shape}")

    x = p["tok_emb"][tokens]
    pol = polar_batch(np.asarray(xy, dtype=np.float64)).astype(dt)
    if cfg.use_sre:
        sre = (pol @ p["sre_w"] + p["sre_b"]) * sre_mask[..., None]
        x = x + sre
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)

    layers = []
    for i in range(cfg.n_layers):
        pre = f"l{i}."
        h, ln1c = _layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        q = _split_heads(h @ p[pre + "wq"] + p[pre + "bq"], cfg.n_heads)
        k = _split_heads(h @ p[pre + "wk"] + p[pre + "bk"], cfg.n_heads)
        v = _split_heads(h @ p[pre + "wv"] + p[pre + "bv"], cfg.n_heads)
        scores = (q @ k.swapaxes(-1, -2)) * scale
        scores -= scores.max(-1, keepdims=True)
        e = np.exp(scores)
        attn_p = e / e.sum(-1, keepdims=True)
        merged = _merge_heads(attn_p @ v)
        x = x + merged @ p[pre + "wo"] + p[pre + "bo"]

        h2, ln2c = _layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        u = h2 @ p[pre + "w1"] + p[pre + "b1"]
        act, tanh_u = _gelu(u)
        x = x + act @ p[pre + "w2"] + p[pre + "b2"]
        if want_cache:
            layers.append(
                dict(h=h, ln1c=ln1c, q=q, k=k, v=v, attn_p=attn_p, merged=merged,
                     h2=h2, ln2c=ln2c, u=u, tanh_u=tanh_u)
            )

    y, lnfc = _layer_norm(x, p["lnf_g"], p["lnf_b"])
    slow_logits = y @ p["slow_w"] + p["slow_b"]
    fast_logits = y[:, -1, :] @ p["fast_w"] + p["fast_b"]
    if not (np.isfinite(fast_logits).all() and np.isfinite(slow_logits).all()):
        raise NonFiniteActivation("non-finite logits")
    if not want_cache:
        return fast_logits, slow_logits
    cache = dict(tokens=tokens, pol=pol, sre_mask=sre_mask, layers=layers, y=y, lnfc=lnfc, scale=scale)
    return fast_logits, slow_logits, cache


def backward_batch(params, cache, d_fast, d_slow):
    """Gradients of a scalar loss given logit gradients; returns a grads dict."""
    cfg = params.config
    p = params.tensors
    grads = {}
    y = cache["y"]

    grads["slow_w"] = _mm_grad(y, d_slow)
    grads["slow_b"] = d_slow.sum(axis=(0, 1))
    grads["fast_w"] = y[:, -1, :].T @ d_fast
    grads["fast_b"] = d_fast.sum(axis=0)

    dy = d_slow @ p["slow_w"].T
    dy[:, -1, :] += d_fast @ p["fast_w"].T
    dx, grads["lnf_g"], grads["lnf_b"] = _layer_norm_bwd(dy, p["lnf_g"], cache["lnfc"])

    scale = cache["scale"]
    for i in reversed(range(cfg.n_layers)):
        pre = f"l{i}."
        c = cache["layers"][i]

        # feed-forward branch
        act = 0.5 * c["u"] * (1.0 + c["tanh_u"])
        grads[pre + "w2"] = _mm_grad(act, dx)
        grads[pre + "b2"] = dx.sum(axis=(0, 1))
        d_act = dx @ p[pre + "w2"].T
        d_u = d_act * _gelu_grad(c["u"], c["tanh_u"])
        grads[pre + "w1"] = _mm_grad(c["h2"], d_u)
        grads[pre + "b1"] = d_u.sum(axis=(0, 1))
        d_h2 = d_u @ p[pre + "w1"].T
        d_res, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _layer_norm_bwd(
            d_h2, p[pre + "ln2_g"], c["ln2c"]
        )
        dx = dx + d_res

        # attention branch
        grads[pre + "wo"] = _mm_grad(c["merged"], dx)
        grads[pre + "bo"] = dx.sum(axis=(0, 1))
        d_merged = _split_heads(dx @ p[pre + "wo"].T, cfg.n_heads)
        d_p = d_merged @ c["v"].swapaxes(-1, -2)
        d_v = c["attn_p"].swapaxes(-1, -2) @ d_merged
        d_scores = c["attn_p"] * (d_p - (d_p * c["attn_p"]).sum(-1, keepdims=True))
        d_q = (d_scores @ c["k"]) * scale
        d_k = (d_scores.swapaxes(-1, -2) @ c["q"]) * scale
        d_qf, d_kf, d_vf = _merge_heads(d_q), _merge_heads(d_k), _merge_heads(d_v)
        grads[pre + "wq"] = _mm_grad(c["h"], d_qf)
        grads[pre + "bq"] = d_qf.sum(axis=(0, 1))
        grads[pre + "wk"] = _mm_grad(c["h"], d_kf)
        grads[pre + "bk"] = d_kf.sum(axis=(0, 1))
        grads[pre + "wv"] = _mm_grad(c["h"], d_vf)
        grads[pre + "bv"] = d_vf.sum(axis=(0, 1))
        d_h = d_qf @ p[pre + "wq"].T + d_kf @ p[pre + "wk"].T + d_vf @ p[pre + "wv"].T
        d_res, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _layer_norm_bwd(
            d_h, p[pre + "ln1_g"], c["ln1c"]
        )
        dx = dx + d_res

    grads["tok_emb"] = np.zeros_like(p["tok_emb"])
    np.add.at(grads["tok_emb"], cache["tokens"], dx)
    if cfg.use_sre:
        d_sre = dx * cache["sre_mask"][..., None]
        grads["sre_w"] = _mm_grad(cache["pol"], d_sre)
        grads["sre_b"] = d_sre.sum(axis=(0, 1))
    else:
        grads["sre_w"] = np.zeros_like(p["sre_w"])
        grads["sre_b"] = np.zeros_like(p["sre_b"])
    return grads


def forward(params, tokens, slot_s, slot_g):
    """Single-observation forward: (5,) action logits and (256, V) slow logits."""
    from ..tokenizer import sre_xy

    xy, mask = sre_xy(slot_s, slot_g)
    fast, slow = forward_batch(
        params, np.asarray(tokens)[None, :], xy[None], mask[None]
    )
    return fast[0], slow[0]
