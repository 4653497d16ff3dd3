"""Mini-batch training with Adam and a linear learning-rate warmup."""
from __future__ import annotations

import csv
import time

import numpy as np

from ..dataset import Dataset
from ..tokenizer import sre_xy_batch
from .config import ModelConfig, ModelParams, init_params
from .losses import loss_and_grad, position_weights


class DatasetEmpty(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


class Batches:
    """Training arrays precomputed once from an MWDS dataset."""

    def __init__(self, ds: Dataset):
        if len(ds) == 0:
            raise DatasetEmpty("dataset has no samples")
        self.inputs = ds.inputs.astype(np.int64)
        self.targets = ds.targets.astype(np.int64)
        self.actions = ds.actions.astype(np.int64)
        self.weights = position_weights(ds.a_mask(), ds.g_mask(), ds.m_mask())
        self.xy, self.sre_mask = sre_xy_batch(ds.slot_s(), ds.slot_g())

    def __len__(self):
        return len(self.inputs)

    def make(self, idx) -> dict:
        return {
            "tokens": self.inputs[idx],
            "xy": self.xy[idx].astype(np.float64),
            "sre_mask": self.sre_mask[idx],
            "targets": self.targets[idx],
            "actions": self.actions[idx],
            "weights": self.weights[idx],
        }


_B1, _B2, _EPS = 0.9, 0.999, 1e-8


def train(dataset, config: ModelConfig, params: ModelParams | None = None,
          steps: int = 200, log_path=None):
    """Run `steps` Adam updates on total loss; returns (params, log rows).

    Deterministic for a fixed (dataset, config, starting params). Resuming
    from saved params continues the step count; Adam moments restart.
    """
    batches = dataset if isinstance(dataset, Batches) else Batches(dataset)
    if params is None:
        params = init_params(config)
    else:
        config = params.config
    rng = np.random.default_rng([config.seed, params.trained_steps])
    p = params.tensors
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(t) for k, t in p.items()}

    log = []
    for s in range(1, steps + 1):
        t0 = time.perf_counter()
        idx = rng.integers(0, len(batches), size=config.batch_size)
        fast_l, slow_l, total_l, grads = loss_and_grad(params, batches.make(idx))
        if not np.isfinite(total_l):
            raise DivergenceDetected(f"non-finite loss at step {params.trained_steps + 1}")

        global_step = params.trained_steps + 1
        lr_t = config.lr * min(1.0, global_step / max(1, config.warmup_steps))
        c1 = 1.0 - _B1 ** s
        c2 = 1.0 - _B2 ** s
        for k, g in grads.items():
            m[k] = _B1 * m[k] + (1.0 - _B1) * g
            v[k] = _B2 * v[k] + (1.0 - _B2) * g * g
            p[k] = p[k] - lr_t * (m[k] / c1) / (np.sqrt(v[k] / c2) + _EPS)
        params.trained_steps = global_step
        log.append((global_step, fast_l, slow_l, total_l, (time.perf_counter() - t0) * 1e3))

    if log_path is not None:
        with open(log_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if fh.tell() == 0:
                w.writerow(["step", "fast_loss", "slow_loss", "total_loss", "wall_ms"])
            for row in log:
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}", f"{row[4]:.3f}"])
    return params, log
