"""Cross-entropy losses: per-position weighted slow loss, final-position fast
loss, and their combination total = fast + 0.5 * slow."""
from __future__ import annotations

import numpy as np

from .network import backward_batch, forward_batch


class ZeroWeightSum(ValueError):
    pass


def token_loss(pred_dist, label: int) -> float:
    """Negative log probability of the true label."""
    return float(-np.log(np.asarray(pred_dist)[label]))


def position_weights(a_mask, g_mask, m_mask) -> np.ndarray:
    """Per-position weights: 1.0 on real/estimated-action positions, 0.0 on
    masked positions (masking wins), 0.5 everywhere else including the cost
    map."""
    w = np.full(np.asarray(m_mask).shape, 0.5, dtype=np.float64)
    w[np.asarray(a_mask) | np.asarray(g_mask)] = 1.0
    w[np.asarray(m_mask)] = 0.0
    return w


def _log_softmax(logits):
    m = logits.max(-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(-1, keepdims=True))


def slow_loss_from_logits(slow_logits, targets, weights) -> float:
    """Weighted mean token loss, normalized per sample by its weight sum."""
    logp = _log_softmax(np.asarray(slow_logits, dtype=np.float64))
    tgt = np.asarray(targets, dtype=np.int64)
    ce = -np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    w = np.asarray(weights, dtype=np.float64)
    wsum = w.sum(-1)
    if np.any(wsum == 0.0):
        raise ZeroWeightSum("a sample has zero total weight")
    per_sample = (w * ce).sum(-1) / wsum
    return float(per_sample.mean())


def fast_loss_from_logits(fast_logits, actions) -> float:
    """Mean cross-entropy of the action read at the final position."""
    logp = _log_softmax(np.asarray(fast_logits, dtype=np.float64))
    act = np.asarray(actions, dtype=np.int64)
    ce = -np.take_along_axis(logp, act[..., None], axis=-1)[..., 0]
    return float(ce.mean())


# spec-facing aliases
slow_loss = slow_loss_from_logits
fast_loss = fast_loss_from_logits


def total_loss(fast_logits, slow_logits, targets, actions, weights) -> float:
    return fast_loss_from_logits(fast_logits, actions) + 0.5 * slow_loss_from_logits(
        slow_logits, targets, weights
    )


def _softmax(logits):
    m = logits.max(-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(-1, keepdims=True)


def loss_and_grad(params, batch):
    """Forward + backward over one batch dict.

    batch keys: tokens (B,256), xy (B,256,2), sre_mask (B,256), targets
    (B,256), actions (B,), weights (B,256). Returns (fast, slow, total,
    grads).
    """
    dt = params.config.np_dtype
    fast_logits, slow_logits, cache = forward_batch(
        params, batch["tokens"], batch["xy"], batch["sre_mask"], want_cache=True
    )
    targets = np.asarray(batch["targets"], dtype=np.int64)
    actions = np.asarray(batch["actions"], dtype=np.int64)
    weights = np.asarray(batch["weights"], dtype=np.float64)
    b = fast_logits.shape[0]

    fast_l = fast_loss_from_logits(fast_logits, actions)
    slow_l = slow_loss_from_logits(slow_logits, targets, weights)
    total_l = fast_l + 0.5 * slow_l

    p_fast = _softmax(fast_logits.astype(np.float64))
    p_fast[np.arange(b), actions] -= 1.0
    d_fast = (p_fast / b).astype(dt)

    p_slow = _softmax(slow_logits.astype(np.float64))
    p_slow[np.arange(b)[:, None], np.arange(targets.shape[1])[None, :], targets] -= 1.0
    wsum = weights.sum(-1)
    coef = 0.5 * weights / (b * wsum[:, None])
    d_slow = (p_slow * coef[..., None]).astype(dt)

    grads = backward_batch(params, cache, d_fast, d_slow)
    return fast_l, slow_l, total_l, grads
