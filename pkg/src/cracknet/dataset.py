"""Patch samples, ratio-controlled training sets and batching.

A sample is the (2h+1) x (2h+1) window around a centre pixel together
with the s x s label window around the same centre. Coordinates are
(x, y) = (column, row). Patches are gathered lazily from the padded
images, so a training set only stores centre indices.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .io import pad_symmetric


class SamplingError(ValueError):
    """The corpus cannot satisfy the requested sampling policy."""


@dataclass(frozen=True)
class PatchGeometry:
    h: int = 13
    s: int = 5

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("h must be non-negative")
        if self.s < 1 or self.s % 2 == 0:
            raise ValueError(f"s must be a positive odd number, got {self.s}")
        if self.s > 2 * self.h + 1:
            raise ValueError(f"s={self.s} exceeds the patch side {2 * self.h + 1}")

    @property
    def side(self):
        return 2 * self.h + 1


@dataclass
class PatchSample:
    pixels: np.ndarray  # (2h+1, 2h+1, C)
    labels: Optional[np.ndarray]  # (s*s,) uint8, None for test samples
    center: tuple  # (x, y)
    polarity: Optional[bool]


@dataclass(frozen=True)
class SamplingPolicy:
    """Negative:positive ratio ``R``; ``R=None`` samples pixels at their natural ratio."""

    R: Optional[float] = 3.0
    total_cap: Optional[int] = None
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive")
        if self.R is None and self.total_cap is None:
            raise ValueError("natural-ratio sampling needs a total_cap")
        if self.total_cap is not None and self.total_cap < 1:
            raise ValueError("total_cap must be positive")


def extract_patch(padded, x, y, geometry: PatchGeometry):
    """Window of side 2h+1 centred on (x, y) of an image already padded by h."""
    h = geometry.h
    height = padded.shape[0] - 2 * h
    width = padded.shape[1] - 2 * h
    if not (0 <= x < width and 0 <= y < height):
        raise IndexError(f"centre ({x}, {y}) outside the {width}x{height} image")
    return padded[y:y + 2 * h + 1, x:x + 2 * h + 1]


def label_window(mask, x, y, s):
    """Row-major s*s labels around (x, y); borders use symmetric mask padding."""
    height, width = mask.shape
    if not (0 <= x < width and 0 <= y < height):
        raise IndexError(f"centre ({x}, {y}) outside the {width}x{height} mask")
    r = s // 2
    padded = pad_symmetric(mask, r)
    return np.ascontiguousarray(padded[y:y + s, x:x + s]).reshape(-1)


def planned_counts(n_positive, n_negative, policy: SamplingPolicy):
    """(positives, negatives) a policy draws from a corpus with the given pools."""
    if policy.R is None:
        return None
    if policy.total_cap is None:
        pos = n_positive
        neg = int(math.floor(policy.R * n_positive + 0.5))
    else:
        pos = int(math.floor(policy.total_cap / (1.0 + policy.R) + 0.5))
        neg = policy.total_cap - pos
    if pos > n_positive:
        raise SamplingError(f"policy needs {pos} positives, corpus has {n_positive}")
    if neg > n_negative:
        raise SamplingError(f"policy needs {neg} negatives, corpus has {n_negative}")
    return pos, neg


class _PatchSource:
    """Padded images/masks of a corpus plus vectorised window gathering."""

    def __init__(self, images, masks, geometry: PatchGeometry):
        self.geometry = geometry
        self.channels = images[0].shape[2]
        self.images = []
        self.windows = []
        for img in images:
            if img.shape[2] != self.channels:
                raise ValueError("all images of a corpus must share the channel count")
            padded = np.ascontiguousarray(pad_symmetric(np.asarray(img, dtype=np.float32), geometry.h))
            self.images.append(padded)
            # (H, W, C, side, side) view, no copy
            self.windows.append(sliding_window_view(padded, (geometry.side, geometry.side), axis=(0, 1)))
        self.label_windows = None
        if masks is not None:
            r = geometry.s // 2
            self.label_windows = [sliding_window_view(pad_symmetric(m, r), (geometry.s, geometry.s))
                                  for m in masks]

    def gather(self, img_idx, ys, xs):
        n = len(ys)
        side = self.geometry.side
        pixels = np.empty((n, side, side, self.channels), dtype=np.float32)
        labels = None
        if self.label_windows is not None:
            labels = np.empty((n, self.geometry.s ** 2), dtype=np.uint8)
        for k in np.unique(img_idx):
            sel = np.flatnonzero(img_idx == k)
            pixels[sel] = self.windows[k][ys[sel], xs[sel]].transpose(0, 2, 3, 1)
            if labels is not None:
                labels[sel] = self.label_windows[k][ys[sel], xs[sel]].reshape(len(sel), -1)
        return pixels, labels


class TrainingSet:
    """Labelled centres drawn from a corpus; iterating yields :class:`PatchSample`."""

    def __init__(self, source: _PatchSource, stems, img_idx, ys, xs):
        self.source = source
        self.stems = list(stems)
        self.img_idx = img_idx
        self.ys = ys
        self.xs = xs
        centre = (source.geometry.s ** 2) // 2
        self.polarity = np.empty(len(ys), dtype=bool)
        for k in np.unique(img_idx):
            sel = np.flatnonzero(img_idx == k)
            self.polarity[sel] = source.label_windows[k][ys[sel], xs[sel]].reshape(len(sel), -1)[:, centre] == 1

    @property
    def geometry(self):
        return self.source.geometry

    @property
    def n_positive(self):
        return int(self.polarity.sum())

    @property
    def n_negative(self):
        return len(self) - self.n_positive

    def __len__(self):
        return len(self.ys)

    def batch(self, idx):
        return self.source.gather(self.img_idx[idx], self.ys[idx], self.xs[idx])

    def sample(self, i) -> PatchSample:
        px, lab = self.batch(np.array([i]))
        return PatchSample(px[0], lab[0], (int(self.xs[i]), int(self.ys[i])), bool(self.polarity[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.sample(i)

    def write_sidecar(self, path):
        """One ``stem x y polarity`` line per sample, in stream order."""
        with open(path, "w") as fh:
            for k, y, x, pol in zip(self.img_idx, self.ys, self.xs, self.polarity):
                fh.write(f"{self.stems[k]} {x} {y} {int(pol)}\n")


def _pool(masks, want_positive):
    """Flat (image, pixel) indices of all crack / non-crack pixels, in stem then pixel order."""
    img, pix = [], []
    for k, m in enumerate(masks):
        flat = np.flatnonzero(m.reshape(-1) == (1 if want_positive else 0))
        img.append(np.full(len(flat), k, dtype=np.int32))
        pix.append(flat)
    return np.concatenate(img), np.concatenate(pix)


def _stratified_choice(rng, pool_img, n_images, count):
    """Draw ``count`` pool entries with per-image quotas proportional to pool size."""
    sizes = np.bincount(pool_img, minlength=n_images)
    quotas = np.floor(sizes * count / sizes.sum()).astype(int)
    # largest remainders take the leftover draws
    rest = count - quotas.sum()
    order = np.argsort(-(sizes * count / sizes.sum() - quotas), kind="stable")
    quotas[order[:rest]] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    picks = [starts[k] + rng.choice(sizes[k], quotas[k], replace=False) for k in range(n_images) if quotas[k]]
    return np.concatenate(picks) if picks else np.empty(0, dtype=int)


def build_training_set(corpus, geometry: PatchGeometry, policy: SamplingPolicy) -> TrainingSet:
    """Select positive and negative centres per ``policy`` and shuffle them.

    Without a cap every crack pixel is used plus round(R * positives)
    non-crack pixels drawn without replacement from the pooled corpus. With
    ``total_cap`` T, T/(1+R) positives and the remainder negatives are
    drawn. ``R=None`` draws T pixels uniformly regardless of label.
    """
    if not corpus:
        raise SamplingError("empty corpus")
    masks = [item.mask for item in corpus]
    for item in corpus:
        if item.mask.shape != item.image.shape[:2]:
            raise SamplingError(f"{item.stem}: mask and image sizes differ")
    rng = np.random.default_rng(policy.seed)
    pos_img, pos_pix = _pool(masks, True)
    neg_img, neg_pix = _pool(masks, False)
    if len(pos_pix) == 0:
        raise SamplingError("corpus has no crack pixels")

    if policy.R is None:
        all_img = np.concatenate([pos_img, neg_img])
        all_pix = np.concatenate([pos_pix, neg_pix])
        if policy.total_cap > len(all_pix):
            raise SamplingError(f"total_cap {policy.total_cap} exceeds {len(all_pix)} available pixels")
        pick = rng.choice(len(all_pix), policy.total_cap, replace=False)
        img, pix = all_img[pick], all_pix[pick]
    else:
        n_pos, n_neg = planned_counts(len(pos_pix), len(neg_pix), policy)
        if n_pos == len(pos_pix):
            ppick = np.arange(n_pos)
        else:
            ppick = rng.choice(len(pos_pix), n_pos, replace=False)
        if policy.stratify:
            npick = _stratified_choice(rng, neg_img, len(corpus), n_neg)
        else:
            npick = rng.choice(len(neg_pix), n_neg, replace=False)
        img = np.concatenate([pos_img[ppick], neg_img[npick]])
        pix = np.concatenate([pos_pix[ppick], neg_pix[npick]])

    order = rng.permutation(len(pix))
    img, pix = img[order], pix[order]
    widths = np.array([m.shape[1] for m in masks])
    ys, xs = np.divmod(pix, widths[img])
    source = _PatchSource([item.image for item in corpus], masks, geometry)
    return TrainingSet(source, [item.stem for item in corpus], img.astype(np.int64), ys, xs)


class TestSet:
    """Every pixel of one image as an unlabelled centre, row-major."""

    __test__ = False  # not a pytest class

    def __init__(self, image, geometry: PatchGeometry):
        image = np.asarray(image, dtype=np.float32)
        self.height, self.width = image.shape[:2]
        self.source = _PatchSource([image], None, geometry)
        self.ys, self.xs = np.divmod(np.arange(self.height * self.width), self.width)

    def __len__(self):
        return len(self.ys)

    def batch(self, idx):
        pixels, _ = self.source.gather(np.zeros(len(idx), dtype=np.int64), self.ys[idx], self.xs[idx])
        return pixels

    def __iter__(self):
        for i in range(len(self)):
            yield PatchSample(self.batch(np.array([i]))[0], None, (int(self.xs[i]), int(self.ys[i])), None)


def build_test_set(image, geometry: PatchGeometry) -> TestSet:
    return TestSet(image, geometry)


def epoch_permutation(n, seed, epoch):
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


def batch_iterator(samples, batch_size, seed, epochs=1):
    """Yield shuffled batches; each epoch uses a permutation derived from (seed, epoch).

    ``samples`` is either an int (yield index arrays) or an object with
    ``batch(indices)``. The last short batch of an epoch is kept.
    ``epochs=None`` cycles forever.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = samples if isinstance(samples, (int, np.integer)) else len(samples)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = epoch_permutation(n, seed, epoch)
        for i in range(0, n, batch_size):
            idx = np.sort(perm[i:i + batch_size])
            yield idx if isinstance(samples, (int, np.integer)) else samples.batch(idx)
        epoch += 1


def batches_per_epoch(n, batch_size):
    return -(-n // batch_size)
