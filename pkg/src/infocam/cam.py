"""CAM, infoCAM and infoCAM+ intensity maps over final feature maps.

Intensities fold in the global-average-pooling factor 1/(H*W), so the
full-grid sum of a class's CAM equals its logit exactly, and the full-grid
sum of an infoCAM map equals the difference between the true label's
pointwise MI and the mean pointwise MI of the other labels (the
log-sum-exp and log M terms cancel in that difference).
"""

from dataclasses import dataclass

import numpy as np

MAP_KINDS = ("cam", "infocam", "infocam_plus")


@dataclass
class IntensityMap:
    """Per-location score grid on the feature-map lattice."""

    grid: np.ndarray
    kind: str
    target_label: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError("intensity grid must be 2-D")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("intensity grid must be finite")


def _class_maps(fmaps, weights):
    """Pooled per-class maps: (M, H, W) with grid sums equal to the logits."""
    fmaps = np.asarray(fmaps, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if fmaps.ndim != 3:
        raise ValueError("feature maps must have shape (K, H, W)")
    if weights.ndim != 2 or weights.shape[1] != fmaps.shape[0]:
        raise ValueError(
            f"weight matrix {weights.shape} does not match {fmaps.shape[0]} "
            f"feature maps")
    k, h, w = fmaps.shape
    return np.tensordot(weights, fmaps, axes=([1], [0])) / (h * w)


def _check_label(weights, label):
    m = np.asarray(weights).shape[0]
    if not 0 <= label < m:
        raise ValueError(f"label {label} out of range [0, {m})")
    return m


def cam_map(fmaps, weights, label):
    """Weighted sum of feature maps for one class, pooling factor folded in."""
    _check_label(weights, label)
    grids = _class_maps(fmaps, weights)
    return IntensityMap(grids[label], "cam", label)


def infocam_map(fmaps, weights, label):
    """True-class CAM minus the average CAM of every other class."""
    m = _check_label(weights, label)
    if m < 2:
        raise ValueError("infoCAM needs at least two classes")
    grids = _class_maps(fmaps, weights)
    others = (grids.sum(axis=0) - grids[label]) / (m - 1)
    return IntensityMap(grids[label] - others, "infocam", label)


def infocam_plus_map(fmaps, weights, label):
    """True-class CAM minus the CAM of the most-unlikely other class.

    The contrast class is the argmin of the full-grid sums (equivalently of
    the logits) over the classes other than ``label``, chosen once per
    image; ties resolve to the lowest index.
    """
    m = _check_label(weights, label)
    if m < 2:
        raise ValueError("infoCAM+ needs at least two classes")
    grids = _class_maps(fmaps, weights)
    sums = grids.sum(axis=(1, 2))
    sums[label] = np.inf
    contrast = int(np.argmin(sums))
    return IntensityMap(grids[label] - grids[contrast], "infocam_plus", label)


def region_sum(imap, size):
    """Sum each cell's size-by-size neighborhood, zero-padded at borders.

    Output dimensions match the input.  Even sizes center on the top-left
    cell of the window's middle block.
    """
    grid = imap.grid
    h, w = grid.shape
    if not 1 <= size <= min(h, w):
        raise ValueError(
            f"region size {size} outside [1, {min(h, w)}] for {h}x{w} map")
    lo = (size - 1) // 2
    hi = size // 2
    padded = np.pad(grid, ((lo, hi), (lo, hi)))
    out = np.zeros_like(grid)
    for dr in range(size):
        for dc in range(size):
            out += padded[dr:dr + h, dc:dc + w]
    return IntensityMap(out, imap.kind, imap.target_label)


def infocam_plus_region_map(fmaps, weights, label, size):
    """Per-region variant of infoCAM+: the contrast class is re-chosen for
    every window as the argmin of that window's region sums."""
    m = _check_label(weights, label)
    if m < 2:
        raise ValueError("infoCAM+ needs at least two classes")
    grids = _class_maps(fmaps, weights)
    sums = np.stack([
        region_sum(IntensityMap(g, "cam", label), size).grid for g in grids])
    others = np.delete(sums, label, axis=0)
    return IntensityMap(sums[label] - others.min(axis=0),
                        "infocam_plus", label)


def point_map(fmaps, weights, label, kind):
    if kind == "cam":
        return cam_map(fmaps, weights, label)
    if kind == "infocam":
        return infocam_map(fmaps, weights, label)
    if kind == "infocam_plus":
        return infocam_plus_map(fmaps, weights, label)
    raise ValueError(f"unknown map kind {kind!r}")


def write_pgm(grid, path):
    """Min-max scale a grid to 0..255 and write a binary P5 graymap."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    scaled = np.zeros_like(g) if hi == lo else (g - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        f.write(pixels.tobytes())


def write_raw(grid, path):
    """Exact float64 dump of a grid (numpy .npy), for tests and debugging."""
    np.save(path, np.asarray(grid, dtype=np.float64))
