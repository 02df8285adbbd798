"""Whole-image prediction by structured voting.

Every pixel is used as a patch centre; each s x s output window is added
onto the pixels it covers. Window cells that fall outside the image are
dropped, so border pixels collect fewer than s*s votes.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import PatchGeometry, build_test_set
from .io import RasterImage
from .network import Model, forward


@dataclass
class VoteMap:
    sum: np.ndarray  # (H, W) float64
    count: np.ndarray  # (H, W) int64


@dataclass
class ProbabilityMap:
    values: np.ndarray  # (H, W) in [0, 1]
    mode: str


@dataclass
class BinaryPrediction:
    values: np.ndarray  # (H, W) uint8
    threshold: float


def expected_counts(height, width, s):
    """Number of s x s windows centred inside the image that cover each pixel."""
    r = s // 2
    rows = np.arange(height)
    cols = np.arange(width)
    per_row = np.minimum(rows + r, height - 1) - np.maximum(rows - r, 0) + 1
    per_col = np.minimum(cols + r, width - 1) - np.maximum(cols - r, 0) + 1
    return np.outer(per_row, per_col).astype(np.int64)


def accumulate(windows, ys, xs, height, width, vote_map=None):
    """Add flattened s*s windows centred at (ys, xs) into a vote map."""
    windows = np.asarray(windows)
    s = int(round(np.sqrt(windows.shape[1])))
    if vote_map is None:
        vote_map = VoteMap(np.zeros((height, width)), np.zeros((height, width), dtype=np.int64))
    kernels.accumulate_votes(vote_map.sum, vote_map.count,
                             windows.reshape(-1, s, s).astype(np.float64), ys, xs)
    return vote_map


def predict_image(model: Model, image, geometry: PatchGeometry = None, batch_size=1024) -> VoteMap:
    values = image.values if isinstance(image, RasterImage) else np.asarray(image)
    if values.ndim == 2:
        values = values[:, :, None]
    cfg = model.config
    if values.shape[2] != cfg.input_channels:
        raise ValueError(f"image has {values.shape[2]} channels, model expects {cfg.input_channels}")
    geometry = geometry or PatchGeometry(cfg.h, cfg.s)
    if (geometry.h, geometry.s) != (cfg.h, cfg.s):
        raise ValueError(f"geometry {geometry} does not match the model (h={cfg.h}, s={cfg.s})")
    test = build_test_set(values, geometry)
    height, width = values.shape[:2]
    votes = VoteMap(np.zeros((height, width)), np.zeros((height, width), dtype=np.int64))
    for start in range(0, len(test), batch_size):
        idx = np.arange(start, min(start + batch_size, len(test)))
        out = forward(model, test.batch(idx))
        accumulate(out, test.ys[idx], test.xs[idx], height, width, votes)
    return votes


def normalize_votes(votes: VoteMap, mode="mean") -> ProbabilityMap:
    """``mean``: sum / count. ``global``: the mean map min-max rescaled to [0, 1]."""
    if mode not in ("mean", "global"):
        raise ValueError(f"unknown normalisation mode {mode!r}")
    if (votes.count <= 0).any():
        raise ValueError("every pixel needs at least one vote")
    mean = votes.sum / votes.count
    if mode == "global":
        lo, hi = mean.min(), mean.max()
        mean = (mean - lo) / (hi - lo) if hi > lo else np.zeros_like(mean)
    return ProbabilityMap(np.clip(mean, 0.0, 1.0), mode)


def binarize(prob, threshold=0.5) -> BinaryPrediction:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    values = prob.values if isinstance(prob, ProbabilityMap) else np.asarray(prob)
    return BinaryPrediction((values >= threshold).astype(np.uint8), threshold)


def probability_map(model: Model, image, mode="mean", batch_size=1024) -> ProbabilityMap:
    return normalize_votes(predict_image(model, image, batch_size=batch_size), mode)
