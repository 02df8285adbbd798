"""Image, mask, probability-map and checkpoint I/O.

Images are 8-bit PNGs scaled to [-1, 1] by ``v / 127.5 - 1``. Masks are
binarised at 127. Checkpoints use a small self-describing binary layout::

    b"CRKN" | u32 version | u32 channels | u32 s | u32 n_tensors
    n_tensors x (u32 rank | rank x u32 dims | u32 kind)
    float32 payload (little endian, tensors in table order)
    u64 iterations | u64 seed | f32 R

All integers are little endian.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MAGIC = b"CRKN"
CHECKPOINT_VERSION = 1
LUMA = np.array([0.299, 0.587, 0.114])

# kind tags of checkpoint tensors
KIND_TAGS = {
    ("conv", "weights"): 1, ("conv", "biases"): 2,
    ("fc", "weights"): 3, ("fc", "biases"): 4,
    ("conv", "m_weights"): 5, ("conv", "m_biases"): 6, ("conv", "v_weights"): 7, ("conv", "v_biases"): 8,
    ("fc", "m_weights"): 9, ("fc", "m_biases"): 10, ("fc", "v_weights"): 11, ("fc", "v_biases"): 12,
}
_FIELDS = ("weights", "biases", "m_weights", "m_biases", "v_weights", "v_biases")


class DataError(Exception):
    """Unreadable or inconsistent input data."""


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class RasterImage:
    values: np.ndarray  # (H, W, C) float32 in [-1, 1]
    source_path: str = ""

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


def normalize(pixels):
    return np.asarray(pixels, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(values):
    return (np.asarray(values, dtype=np.float64) + 1.0) * 127.5


def _open_png(path):
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return img


def load_image(path) -> RasterImage:
    img = _open_png(path)
    mode = img.mode
    if mode in ("RGBA", "P"):
        img = img.convert("RGB")
    elif mode == "LA":
        img = img.convert("L")
    elif mode not in ("L", "RGB"):
        raise DataError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit gray or RGB)")
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return RasterImage(normalize(arr), str(path))


def load_mask(path) -> np.ndarray:
    """Binary crack mask (H, W) of uint8; pixels above 127 are crack."""
    img = _open_png(path)
    if img.mode not in ("1", "L", "P", "RGB", "RGBA", "LA"):
        raise DataError(f"{path}: unsupported PNG mode {img.mode!r} for a mask")
    arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return (arr > 127).astype(np.uint8)


def pad_symmetric(values, h):
    """Edge-inclusive mirror padding of the two spatial axes: [a,b,c] -> [b,a | a,b,c | c,b]."""
    if h < 0:
        raise ValueError("padding must be non-negative")
    values = np.asarray(values)
    if h == 0:
        return values.copy()
    if h >= min(values.shape[0], values.shape[1]):
        raise ValueError(f"padding {h} must be smaller than the image side {min(values.shape[:2])}")
    widths = [(h, h), (h, h)] + [(0, 0)] * (values.ndim - 2)
    return np.pad(values, widths, mode="symmetric")


def match_channels(values, channels):
    """Convert an (H, W, C) image to the requested channel count.

    RGB -> gray uses luma 0.299R + 0.587G + 0.114B; gray -> RGB replicates.
    """
    c = values.shape[2]
    if c == channels:
        return values
    if c == 3 and channels == 1:
        return (values.astype(np.float64) @ LUMA).astype(values.dtype)[:, :, None]
    if c == 1 and channels == 3:
        return np.repeat(values, 3, axis=2)
    raise ValueError(f"cannot convert {c} channels to {channels}")


def quantize(prob):
    """Map [0, 1] to 0..255 with round-half-up."""
    p = np.asarray(prob, dtype=np.float64)
    if p.size and (not np.isfinite(p).all() or p.min() < 0 or p.max() > 1):
        raise ValueError("probability map values must lie in [0, 1]")
    return np.floor(p * 255.0 + 0.5).astype(np.uint8)


def save_probability_map(prob, path, raw=False):
    Image.fromarray(quantize(prob)).save(path)
    if raw:
        np.save(Path(path).with_suffix(".npy"), np.asarray(prob, dtype=np.float32))


def save_binary_mask(mask, path):
    m = np.asarray(mask)
    if m.size and not np.isin(m, (0, 1)).all():
        raise ValueError("binary mask must contain only 0 and 1")
    Image.fromarray(m.astype(np.uint8) * 255).save(path)


def save_image(pixels, path):
    """Write uint8 (H, W) or (H, W, C) pixels as PNG."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(model, path):
    layers = model.layers
    entries = []
    for prm in layers:
        for name in _FIELDS:
            entries.append((getattr(prm, name), KIND_TAGS[(prm.kind, name)]))
    header = [MAGIC, struct.pack("<4I", CHECKPOINT_VERSION, model.config.input_channels,
                                 model.config.s, len(entries))]
    for arr, tag in entries:
        header.append(struct.pack(f"<I{arr.ndim}II", arr.ndim, *arr.shape, tag))
    if model.dtype != np.float32:
        log.warning("checkpoint payload is float32; %s parameters are rounded", model.dtype)
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr, _ in entries)
    meta = struct.pack("<QQf", model.iterations_done, model.seed & (2**64 - 1), model.ratio)
    Path(path).write_bytes(b"".join(header) + payload + meta)


def _read_table(buf):
    if len(buf) < 20 or buf[:4] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic or truncated header)")
    version, channels, s, n = struct.unpack_from("<4I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if n > 4096:
        raise CorruptCheckpointError(f"implausible tensor count {n}")
    off = 20
    table = []
    for _ in range(n):
        if off + 4 > len(buf):
            raise CorruptCheckpointError("truncated shape table")
        (rank,) = struct.unpack_from("<I", buf, off)
        if rank > 8 or off + 4 * (rank + 2) > len(buf):
            raise CorruptCheckpointError("truncated or invalid shape table entry")
        dims = struct.unpack_from(f"<{rank}I", buf, off + 4)
        (tag,) = struct.unpack_from("<I", buf, off + 4 + 4 * rank)
        off += 4 * (rank + 2)
        table.append((tuple(dims), tag))
    return channels, s, table, off


def load_checkpoint(path, channels=None, s=None, h=13):
    """Read a checkpoint; ``channels``/``s`` when given must match the file."""
    from .core.params import LayerParams
    from .network import Model, NetworkConfig, build_network

    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ck_channels, ck_s, table, off = _read_table(buf)
    n_values = sum(int(np.prod(d)) for d, _ in table)
    if len(buf) != off + 4 * n_values + 20:
        raise CorruptCheckpointError(
            f"checkpoint size {len(buf)} does not match its shape table ({off + 4 * n_values + 20} expected)")
    if channels is not None and channels != ck_channels:
        raise CheckpointShapeError(f"checkpoint has {ck_channels} input channels, run needs {channels}")
    if s is not None and s != ck_s:
        raise CheckpointShapeError(f"checkpoint has output structure s={ck_s}, run needs s={s}")
    try:
        config = NetworkConfig(input_channels=ck_channels, h=h, s=ck_s)
    except ValueError as exc:
        raise CheckpointShapeError(str(exc)) from exc
    template = build_network(config, seed=0, dtype=np.float32)
    expected = [(getattr(p, f).shape, KIND_TAGS[(p.kind, f)]) for p in template.layers for f in _FIELDS]
    if [(d, t) for d, t in table] != expected:
        raise CheckpointShapeError(f"checkpoint tensors do not match the network for channels={ck_channels}, "
                                   f"s={ck_s}, h={h}")
    pos = off
    arrays = []
    for dims, _ in table:
        count = int(np.prod(dims))
        arrays.append(np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32))
        pos += 4 * count
    iterations, seed, ratio = struct.unpack_from("<QQf", buf, pos)
    layers = []
    for i, tmpl in enumerate(template.layers):
        vals = dict(zip(_FIELDS, arrays[6 * i:6 * i + 6]))
        layers.append(LayerParams(tmpl.kind, step_count=iterations, **vals))
    return Model(config, layers, iterations_done=iterations, seed=seed, ratio=float(ratio))


# -- dataset directories ---------------------------------------------------

def read_manifest(path):
    """Parse ``[train]`` / ``[test]`` sections of stems, one per line."""
    splits = {}
    current = None
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            splits.setdefault(current, [])
        elif current is None:
            raise DataError(f"{path}: stem {line!r} appears before any [section]")
        else:
            splits[current].append(line)
    return splits


def write_manifest(path, splits):
    with open(path, "w") as fh:
        for name, stems in splits.items():
            fh.write(f"[{name}]\n")
            for stem in stems:
                fh.write(f"{stem}\n")


@dataclass
class CorpusItem:
    stem: str
    image: np.ndarray  # (H, W, C) float32 in [-1, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}


def load_corpus(root, split="train", manifest=None):
    """Load the image/mask pairs of one split of a dataset directory."""
    root = Path(root)
    manifest = Path(manifest) if manifest else root / "manifest.txt"
    splits = read_manifest(manifest)
    if split not in splits:
        raise DataError(f"{manifest}: no [{split}] section")
    stems = splits[split]
    if not stems:
        raise DataError(f"{manifest}: [{split}] section is empty")
    items = []
    for stem in stems:
        img_path = root / "images" / f"{stem}.png"
        mask_path = root / "masks" / f"{stem}.png"
        if not img_path.exists():
            raise DataError(f"missing image for stem {stem!r}: {img_path}")
        if not mask_path.exists():
            raise DataError(f"missing mask for stem {stem!r}: {mask_path}")
        image = load_image(img_path)
        mask = load_mask(mask_path)
        if mask.shape != image.values.shape[:2]:
            raise DataError(f"{stem}: mask {mask.shape} and image {image.values.shape[:2]} differ in size")
        items.append(CorpusItem(stem, image.values, mask))
    return items


def write_corpus(root, items, splits):
    """Write uint8 images + binary masks in the dataset directory layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for stem, pixels, mask in items:
        save_image(pixels, root / "images" / f"{stem}.png")
        save_binary_mask(mask, root / "masks" / f"{stem}.png")
    write_manifest(root / "manifest.txt", splits)
