"""Synthetic pavement images with random-walk cracks.

Background: mid-grey level with smooth texture, fine grain noise and a few
faint dark stains. Cracks: correlated random walks darkened with a
Gaussian cross-section; the mask marks pixels within the crack's radius of
the walk. Every image draws from its own child seed, so the corpus is
identical however it is split or generated.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .io import CorpusItem, normalize


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 128
    width: int = 128
    channels: int = 3
    noise: float = 0.07  # per-pixel grain std, fraction of full scale
    texture: float = 0.06  # amplitude of the smooth background texture
    crack_count: tuple = (1, 3)
    contrast: float = 0.30  # crack centre darkening, fraction of full scale
    turn_sigma: float = 0.20  # heading change per unit step (radians)
    crack_width: tuple = (3, 5)  # pixels
    crack_length: tuple = (60, 220)  # walk steps
    stain_count: tuple = (0, 2)
    stain_contrast: float = 0.12
    fade: float = 0.5  # relative variation of crack darkness along its path, in [0, 1)
    speckle_count: tuple = (10, 40)  # dark non-crack pits per image
    speckle_contrast: float = 0.25
    label_offset: float = 0.0  # std (pixels) of a smooth sideways drift of the mask from the drawn crack

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not self.contrast > self.noise:
            raise ValueError("crack contrast must exceed the noise amplitude")
        for lo, hi in (self.crack_count, self.crack_width, self.crack_length, self.stain_count):
            if lo > hi or lo < 0:
                raise ValueError("ranges must satisfy 0 <= lo <= hi")
        if self.crack_width[0] < 1:
            raise ValueError("crack width must be at least one pixel")
        if not 0 <= self.fade < 1:
            raise ValueError("fade must lie in [0, 1)")
        if self.label_offset < 0:
            raise ValueError("label_offset must be non-negative")


def _random_walk(rng, spec: SyntheticSpec):
    h, w = spec.height, spec.width
    n = int(rng.integers(spec.crack_length[0], spec.crack_length[1] + 1))
    y, x = rng.uniform(0, h), rng.uniform(0, w)
    heading = rng.uniform(0, 2 * np.pi)
    pts = []
    for _ in range(n):
        pts.append((y, x))
        heading += rng.normal(0, spec.turn_sigma)
        y += np.sin(heading)
        x += np.cos(heading)
        if not (0 <= y < h and 0 <= x < w):
            break
    return np.array(pts)


def _fade_profile(rng, n, fade):
    """Smooth multiplicative darkness factor along a walk of n points, within [1 - fade, 1]."""
    if fade == 0 or n < 2:
        return np.ones(n)
    wave = ndimage.gaussian_filter1d(rng.normal(size=n), sigma=8, mode="nearest")
    wave = (wave - wave.min()) / (np.ptp(wave) + 1e-12)
    return 1.0 - fade * wave


def _drifted(rng, pts, std):
    """Shift each walk point sideways by a smooth random amount with standard deviation ``std``."""
    if std == 0 or len(pts) < 2:
        return pts
    wave = ndimage.gaussian_filter1d(rng.normal(size=len(pts)), sigma=6, mode="nearest")
    wave *= std / (wave.std() + 1e-12)
    tangent = np.gradient(pts, axis=0)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True) + 1e-12
    return pts + wave[:, None] * normal


def _render(rng, spec: SyntheticSpec):
    h, w = spec.height, spec.width
    base = rng.uniform(0.45, 0.65)
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=6)
    texture *= spec.texture / (texture.std() + 1e-12)
    gray = base + texture

    for _ in range(int(rng.integers(spec.stain_count[0], spec.stain_count[1] + 1))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(6, 18, size=2)
        yy, xx = np.mgrid[0:h, 0:w]
        gray -= spec.stain_contrast * np.exp(-0.5 * (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2))

    n_speckles = int(rng.integers(spec.speckle_count[0], spec.speckle_count[1] + 1))
    if n_speckles:
        pits = np.zeros((h, w))
        pits[rng.integers(0, h, n_speckles), rng.integers(0, w, n_speckles)] = 1.0
        pits = ndimage.gaussian_filter(pits, sigma=rng.uniform(0.7, 1.2))
        gray -= spec.speckle_contrast * pits / (pits.max() + 1e-12)

    mask = np.zeros((h, w), dtype=np.uint8)
    darkening = np.zeros((h, w))
    for _ in range(int(rng.integers(spec.crack_count[0], spec.crack_count[1] + 1))):
        pts = _random_walk(rng, spec)
        path = np.zeros((h, w), dtype=bool)
        iy = np.clip(np.round(pts[:, 0]).astype(int), 0, h - 1)
        ix = np.clip(np.round(pts[:, 1]).astype(int), 0, w - 1)
        depth_along = spec.contrast * rng.uniform(0.8, 1.2) * _fade_profile(rng, len(pts), spec.fade)
        depth_map = np.zeros((h, w))
        path[iy, ix] = True
        depth_map[iy, ix] = depth_along
        dist, (ny, nx) = ndimage.distance_transform_edt(~path, return_indices=True)
        width = int(rng.integers(spec.crack_width[0], spec.crack_width[1] + 1))
        radius = (width - 1) / 2
        if spec.label_offset > 0:
            drawn = _drifted(rng, pts, spec.label_offset)
            label_path = np.zeros((h, w), dtype=bool)
            label_path[np.clip(np.round(drawn[:, 0]).astype(int), 0, h - 1),
                       np.clip(np.round(drawn[:, 1]).astype(int), 0, w - 1)] = True
            mask |= (ndimage.distance_transform_edt(~label_path) <= radius).astype(np.uint8)
        else:
            mask |= (dist <= radius).astype(np.uint8)
        sigma = radius + 0.7
        darkening = np.maximum(darkening, depth_map[ny, nx] * np.exp(-0.5 * (dist / sigma) ** 2))
    gray = gray - darkening

    if spec.channels == 3:
        tint = 1.0 + rng.uniform(-0.06, 0.06, size=3)
        rgb = gray[:, :, None] * tint
        rgb += rng.normal(0, spec.noise, size=(h, w, 3))
        img = rgb
    else:
        img = (gray + rng.normal(0, spec.noise, size=(h, w)))[:, :, None]
    pixels = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return pixels, mask


def generate_synthetic_corpus(spec: SyntheticSpec = SyntheticSpec(), n_images=20, seed=0, prefix="syn"):
    """Return ``[(stem, uint8 pixels (H, W, C), mask (H, W))]``."""
    children = np.random.SeedSequence(seed).spawn(n_images)
    out = []
    for i, child in enumerate(children):
        pixels, mask = _render(np.random.default_rng(child), spec)
        out.append((f"{prefix}{i:04d}", pixels, mask))
    return out


def as_corpus(generated):
    """Normalise generated pixels into :class:`CorpusItem` records."""
    return [CorpusItem(stem, normalize(pixels), mask) for stem, pixels, mask in generated]
