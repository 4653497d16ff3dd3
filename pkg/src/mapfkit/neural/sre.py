"""Polar-coordinate position encoding shared by cost-map and agent tokens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tokenizer import COST_XY, SEQ_LEN, sre_xy


def polar(x, y) -> np.ndarray:
    """[r, sin t, cos t] with t = arctan2(y, x); (0, 0) maps to [0, 0, 1]."""
    r = float(np.hypot(x, y))
    t = float(np.arctan2(y, x))
    return np.array([r, np.sin(t), np.cos(t)], dtype=np.float64)


def polar_batch(xy: np.ndarray) -> np.ndarray:
    """Vectorized polar over trailing (x, y) pairs: (..., 2) -> (..., 3)."""
    x = xy[..., 0]
    y = xy[..., 1]
    r = np.hypot(x, y)
    t = np.arctan2(y, x)
    return np.stack([r, np.sin(t), np.cos(t)], axis=-1)


def sre_encode(slot_s: np.ndarray, slot_g: np.ndarray, params) -> np.ndarray:
    """Full (256, d) encoding for one observation's slot geometry.

    Cost-map rows come from the fixed 11x11 offsets, each occupied agent
    segment is (e_s, e_s, e_g, e_g, e_delta x6), empty slots and the tail
    padding are exactly zero. One shared linear map serves every position.
    """
    xy, mask = sre_xy(slot_s, slot_g)
    w = params.tensors["sre_w"]
    b = params.tensors["sre_b"]
    enc = polar_batch(xy).astype(w.dtype) @ w + b
    enc[~mask] = 0.0
    return enc


@dataclass(frozen=True)
class SreSimilarityReport:
    adjacent_mean: float
    non_adjacent_mean: float
    distance_correlation: float
    distinct_levels: int


def _cosine_matrix(enc: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(enc, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    unit = enc / safe[:, None]
    sims = unit @ unit.T
    # zero vectors: identical-to-each-other by convention, orthogonal otherwise
    if zero.any():
        sims[zero, :] = 0.0
        sims[:, zero] = 0.0
        zz = np.outer(zero, zero)
        sims[zz] = 1.0
    # a few ulps of rounding would otherwise leak into the statistics of
    # degenerate (constant) encodings
    return np.round(sims, 12)


def sre_similarity_report(params) -> SreSimilarityReport:
    """Similarity statistics over the 121 cost-map encodings.

    Reports mean cosine similarity of spatially adjacent vs non-adjacent
    pairs, the Pearson correlation between pairwise similarity and spatial
    distance, and the number of distinct two-decimal similarity levels.
    """
    w = params.tensors["sre_w"]
    b = params.tensors["sre_b"]
    if params.config.use_sre:
        enc = polar_batch(COST_XY).astype(np.float64) @ w.astype(np.float64) + b.astype(np.float64)
    else:
        enc = np.zeros((COST_XY.shape[0], w.shape[1]), dtype=np.float64)
    sims = _cosine_matrix(enc)

    diff = COST_XY[:, None, :] - COST_XY[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    iu = np.triu_indices(len(enc), k=1)
    pair_sims = sims[iu]
    pair_dist = dist[iu]
    adjacent = pair_dist == 1.0

    adj_mean = float(pair_sims[adjacent].mean())
    non_mean = float(pair_sims[~adjacent].mean())
    if pair_sims.std() == 0.0 or pair_dist.std() == 0.0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(pair_sims, pair_dist)[0, 1])
    levels = int(np.unique(np.round(pair_sims, 2)).size)
    return SreSimilarityReport(
        adjacent_mean=adj_mean,
        non_adjacent_mean=non_mean,
        distance_correlation=corr,
        distinct_levels=levels,
    )
