"""Finite-difference verification of the hand-built backward pass."""
from __future__ import annotations

import numpy as np

from .losses import (
    fast_loss_from_logits,
    loss_and_grad,
    slow_loss_from_logits,
)
from .network import forward_batch


def _total_loss_value(params, batch) -> float:
    fast_logits, slow_logits = forward_batch(
        params, batch["tokens"], batch["xy"], batch["sre_mask"]
    )
    return fast_loss_from_logits(fast_logits, batch["actions"]) + 0.5 * slow_loss_from_logits(
        slow_logits, batch["targets"], batch["weights"]
    )


def grad_check(params, batch, epsilon: float = 1e-5, n_directions: int = 200,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference derivatives.

    Checks >= n_directions random directions through the full parameter
    vector; each direction mixes every tensor, so a wrong gradient anywhere
    shows up. Requires double precision to be meaningful.
    """
    if params.config.dtype != "f64":
        raise ValueError("grad_check requires an f64 model")
    *_, grads = loss_and_grad(params, batch)
    keys = params.key_order()
    flat_grad = np.concatenate([grads[k].ravel() for k in keys])
    theta = params.flat()
    rng = np.random.default_rng(seed)

    worst = 0.0
    for _ in range(n_directions):
        u = rng.normal(size=theta.size)
        u /= np.linalg.norm(u)
        analytic = float(flat_grad @ u)

        probe = params.copy()
        probe.set_flat(theta + epsilon * u)
        lo_hi = _total_loss_value(probe, batch)
        probe.set_flat(theta - epsilon * u)
        lo_lo = _total_loss_value(probe, batch)
        numeric = (lo_hi - lo_lo) / (2.0 * epsilon)

        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
