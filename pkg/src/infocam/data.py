"""Image dataset handling: IDX ingestion, subsampling, and the double-digit
canvas generator with ground-truth boxes.

Images are (H, W) float64 grids in [0, 1].  Labels are either integer class
indices or, for the double-digit task, length-10 binary presence vectors
with one ground-truth box per present digit class.

The package bundles the UCI optical-recognition handwritten digits (the
8x8 corpus shipped with scikit-learn) as IDX files;
:func:`load_bundled_digits` upscales them to MNIST-like 28x28 glyphs so
the double-digit pipeline runs without external downloads.  Point the
loaders at real MNIST IDX files for the full-scale datasets.
"""

import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .wsol import BoundingBox, tight_box

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_IMGD_MAGIC = b"IMGD"
_IMGD_VERSION = 1

NUM_DIGITS = 10
DIGIT_PRESENCE_RATE = 0.7


@dataclass
class ImageDataset:
    images: np.ndarray                    # (N, H, W) float64 in [0, 1]
    labels: np.ndarray                    # (N,) int64 or (N, 10) uint8
    gt_boxes: list = None                 # per image: [(label, BoundingBox)]
    split: str = "full"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels must have equal length")

    def __len__(self):
        return len(self.images)

    @property
    def multi_label(self):
        return self.labels.ndim == 2


def _read_be32(f, what):
    data = f.read(4)
    if len(data) != 4:
        raise ValueError(f"truncated IDX file while reading {what}")
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files into an ImageDataset."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(
                f"bad image magic 0x{magic:08x}, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}")
        count = _read_be32(f, "image count")
        h = _read_be32(f, "row count")
        w = _read_be32(f, "column count")
        raw = f.read(count * h * w)
        if len(raw) != count * h * w:
            raise ValueError(
                f"truncated image data: expected {count * h * w} bytes, "
                f"got {len(raw)}")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, h, w)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(
                f"bad label magic 0x{magic:08x}, expected "
                f"0x{IDX_LABELS_MAGIC:08x}")
        n_labels = _read_be32(f, "label count")
        raw = f.read(n_labels)
        if len(raw) != n_labels:
            raise ValueError("truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8)
    if count != n_labels:
        raise ValueError(
            f"image count {count} does not match label count {n_labels}")
    return ImageDataset(images / 255.0, labels.astype(np.int64))


def save_idx(ds, images_path, labels_path):
    """Write a single-label dataset back to IDX (pixels rounded to uint8)."""
    if ds.multi_label:
        raise ValueError("IDX supports single-label datasets only")
    n, h, w = ds.images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(np.round(ds.images * 255).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_bundled_digits(upscale=3, pad_to=28):
    """The packaged handwritten digits as MNIST-like single-label images."""
    assets = resources.files("infocam.assets")
    with resources.as_file(assets / "digits-images-idx3-ubyte") as img_path, \
            resources.as_file(assets / "digits-labels-idx1-ubyte") as lbl_path:
        ds = load_idx(img_path, lbl_path)
    images = ds.images.repeat(upscale, axis=1).repeat(upscale, axis=2)
    if pad_to:
        n, h, w = images.shape
        if pad_to < h or pad_to < w:
            raise ValueError("pad_to smaller than upscaled digits")
        top = (pad_to - h) // 2
        left = (pad_to - w) // 2
        padded = np.zeros((n, pad_to, pad_to))
        padded[:, top:top + h, left:left + w] = images
        images = padded
    return ImageDataset(images, ds.labels)


def make_unbalanced(ds, minority=(0, 2, 4, 6, 8), keep_fraction=0.1, seed=0):
    """Keep ceil(keep_fraction * count) seeded-random instances of each
    minority class; other classes are untouched."""
    if ds.multi_label:
        raise ValueError("unbalancing applies to single-label datasets")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    keep = np.ones(len(ds), dtype=bool)
    for cls in minority:
        idx = np.flatnonzero(ds.labels == cls)
        n_keep = int(np.ceil(keep_fraction * idx.size))
        chosen = rng.permutation(idx.size)[:n_keep]
        keep[idx] = False
        keep[idx[chosen]] = True
    return ImageDataset(ds.images[keep], ds.labels[keep], split=ds.split)


def _paste_boxes(canvas, digit, x_offset, y_offset):
    h, w = digit.shape
    canvas[y_offset:y_offset + h, x_offset:x_offset + w] = digit
    box = tight_box(digit > 0)
    return BoundingBox(box.x_min + x_offset, box.y_min + y_offset,
                       box.x_max + x_offset, box.y_max + y_offset)


def make_double_digit(ds, n_images, seed, canvas_hw=(28, 56), jitter=False):
    """Two-slot digit canvases with presence labels and ground-truth boxes.

    Each half of the canvas independently receives a digit with probability
    0.7 (uniform class, uniform instance of that class); draws with no digit
    at all are rejected and redrawn.  The label vector marks present digit
    classes; a class present on both sides collapses to one positive label
    whose ground-truth box is the union of the two tight boxes.
    """
    if n_images <= 0:
        raise ValueError("n_images must be positive")
    if ds.multi_label:
        raise ValueError("source must be a single-label digit dataset")
    ch, cw = canvas_hw
    dh, dw = ds.images.shape[1:]
    half_w = cw // 2
    if dh > ch or dw > half_w:
        raise ValueError("digits do not fit the canvas halves")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    by_class = [np.flatnonzero(ds.labels == d) for d in range(NUM_DIGITS)]
    for d, idx in enumerate(by_class):
        if idx.size == 0:
            raise ValueError(f"source dataset has no instances of digit {d}")

    images = np.zeros((n_images, ch, cw))
    labels = np.zeros((n_images, NUM_DIGITS), dtype=np.uint8)
    gt_boxes = []
    for i in range(n_images):
        while True:
            present = rng.random(2) < DIGIT_PRESENCE_RATE
            if present.any():
                break
        boxes_by_class = {}
        for side, has_digit in enumerate(present):
            if not has_digit:
                continue
            cls = int(rng.integers(NUM_DIGITS))
            inst = int(by_class[cls][rng.integers(by_class[cls].size)])
            if jitter:
                x0 = side * half_w + int(rng.integers(half_w - dw + 1))
                y0 = int(rng.integers(ch - dh + 1))
            else:
                x0 = side * half_w + (half_w - dw) // 2
                y0 = (ch - dh) // 2
            box = _paste_boxes(images[i], ds.images[inst], x0, y0)
            labels[i, cls] = 1
            boxes_by_class.setdefault(cls, []).append(box)
        gt_boxes.append([
            (cls, _union_box(boxes)) for cls, boxes
            in sorted(boxes_by_class.items())])
    return ImageDataset(images, labels, gt_boxes=gt_boxes)


def _union_box(boxes):
    if len(boxes) == 1:
        return boxes[0]
    return BoundingBox(min(b.x_min for b in boxes),
                       min(b.y_min for b in boxes),
                       max(b.x_max for b in boxes),
                       max(b.y_max for b in boxes))


def empirical_priors(ds, num_classes=None):
    """Label frequencies: class priors for single-label data, per-label
    Bernoulli presence rates for multi-label data."""
    if len(ds) == 0:
        raise ValueError("cannot compute priors of an empty dataset")
    if ds.multi_label:
        return ds.labels.mean(axis=0)
    m = num_classes or int(ds.labels.max()) + 1
    counts = np.bincount(ds.labels, minlength=m)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(
            f"classes {missing} have zero count; PC-softmax priors undefined")
    return counts / counts.sum()


def split_image_dataset(ds, ratios=(0.70, 0.15, 0.15), seed=0):
    """Seeded shuffle, then contiguous train/valid/test partition."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(len(ds))
    n_train = int(ratios[0] * len(ds))
    n_valid = int(ratios[1] * len(ds))
    chunks = (perm[:n_train], perm[n_train:n_train + n_valid],
              perm[n_train + n_valid:])
    out = []
    for tag, idx in zip(("train", "valid", "test"), chunks):
        boxes = None if ds.gt_boxes is None else [ds.gt_boxes[i] for i in idx]
        out.append(ImageDataset(ds.images[idx], ds.labels[idx],
                                gt_boxes=boxes, split=tag))
    return tuple(out)


# ---------------------------------------------------------------------------
# Binary container for generated datasets (round-trips boxes and labels).
# Layout: magic 'IMGD', u32 version, u8 multi_label, u8 has_boxes,
# u32 N, u32 H, u32 W, u32 label_width; images as uint8 (value*255);
# labels as uint8 rows; optional per-image box block:
# u8 count, then (u8 label, 4 * u16 coords) per box.
# ---------------------------------------------------------------------------

def save_image_dataset(ds, path):
    n, h, w = ds.images.shape
    multi = ds.multi_label
    label_width = ds.labels.shape[1] if multi else 1
    has_boxes = ds.gt_boxes is not None
    with open(path, "wb") as f:
        f.write(_IMGD_MAGIC)
        f.write(struct.pack("<IBBIIII", _IMGD_VERSION, multi, has_boxes,
                            n, h, w, label_width))
        f.write(np.round(ds.images * 255).astype(np.uint8).tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())
        if has_boxes:
            for entries in ds.gt_boxes:
                f.write(struct.pack("<B", len(entries)))
                for label, box in entries:
                    f.write(struct.pack("<BHHHH", label, box.x_min,
                                        box.y_min, box.x_max, box.y_max))


def load_image_dataset(path, split="full"):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _IMGD_MAGIC:
            raise ValueError(f"bad dataset magic {magic!r}, expected IMGD")
        version, multi, has_boxes, n, h, w, label_width = struct.unpack(
            "<IBBIIII", f.read(22))
        if version != _IMGD_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        images = np.frombuffer(f.read(n * h * w), dtype=np.uint8)
        if images.size != n * h * w:
            raise ValueError("truncated image block")
        images = images.reshape(n, h, w) / 255.0
        if multi:
            labels = np.frombuffer(
                f.read(n * label_width), dtype=np.uint8
            ).reshape(n, label_width).copy()
        else:
            labels = np.frombuffer(
                f.read(n), dtype=np.uint8).astype(np.int64)
        boxes = None
        if has_boxes:
            boxes = []
            for _ in range(n):
                count = struct.unpack("<B", f.read(1))[0]
                entries = []
                for _ in range(count):
                    label, x0, y0, x1, y1 = struct.unpack("<BHHHH", f.read(9))
                    entries.append((label, BoundingBox(x0, y0, x1, y1)))
                boxes.append(entries)
    return ImageDataset(images, labels, gt_boxes=boxes, split=split)


def dump_pgm(ds, out_dir, count=8):
    """Write the first few images as PGM files for eyeballing."""
    from .cam import write_pgm
    paths = []
    for i in range(min(count, len(ds))):
        path = f"{out_dir}/sample_{i:03d}.pgm"
        write_pgm(ds.images[i], path)
        paths.append(path)
    return paths
