"""From intensity maps to bounding boxes and localization scores.

The pipeline mirrors the usual CAM localization recipe: normalize the map,
keep cells above a fraction of the maximum, take the largest 4-connected
component, draw its tight box, and scale that box up to image coordinates.
A localization counts as correct when the predicted box overlaps the ground
truth with IoU above 0.5.
"""

from dataclasses import dataclass

import numpy as np

from . import cam as cam_mod
from .nn.network import forward


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive integer pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self):
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


@dataclass
class LocalizationResult:
    predicted_box: BoundingBox
    gt_box: BoundingBox
    iou: float
    gt_loc_correct: bool
    top1_loc_correct: bool
    predicted_label: int
    true_label: int


def threshold_mask(imap, ratio=0.2):
    """Cells whose positive intensity exceeds ``ratio`` of the map maximum.

    Negative cells mark anti-evidence (infoCAM maps are signed), so the
    map is clipped at zero before comparing against ratio * max.  A map
    with no positive evidence, constant maps included, keeps every cell;
    the caller's full-grid fallback box then applies.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"threshold ratio {ratio} outside [0, 1)")
    grid = imap.grid if isinstance(imap, cam_mod.IntensityMap) else np.asarray(imap)
    clipped = np.maximum(grid, 0.0)
    hi = clipped.max()
    if hi == 0.0:
        return np.ones(grid.shape, dtype=bool)
    return clipped > ratio * hi


def largest_connected_component(mask):
    """Largest 4-connected true region; ties go to the component containing
    the smallest row-major index.  An empty mask maps to an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sizes = [0]
    next_label = 0
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or labels[r, c]:
                continue
            next_label += 1
            stack = [(r, c)]
            labels[r, c] = next_label
            count = 0
            while stack:
                cr, cc = stack.pop()
                count += 1
                if cr > 0 and mask[cr - 1, cc] and not labels[cr - 1, cc]:
                    labels[cr - 1, cc] = next_label
                    stack.append((cr - 1, cc))
                if cr + 1 < h and mask[cr + 1, cc] and not labels[cr + 1, cc]:
                    labels[cr + 1, cc] = next_label
                    stack.append((cr + 1, cc))
                if cc > 0 and mask[cr, cc - 1] and not labels[cr, cc - 1]:
                    labels[cr, cc - 1] = next_label
                    stack.append((cr, cc - 1))
                if cc + 1 < w and mask[cr, cc + 1] and not labels[cr, cc + 1]:
                    labels[cr, cc + 1] = next_label
                    stack.append((cr, cc + 1))
            sizes.append(count)
    if next_label == 0:
        return np.zeros_like(mask)
    best = int(np.argmax(sizes))  # first maximum = earliest-scanned component
    return labels == best


def tight_box(component):
    """Smallest box covering all set cells; x is the column axis."""
    component = np.asarray(component, dtype=bool)
    rows = np.flatnonzero(component.any(axis=1))
    cols = np.flatnonzero(component.any(axis=0))
    if rows.size == 0:
        raise ValueError("tight box of an empty component")
    return BoundingBox(x_min=int(cols[0]), y_min=int(rows[0]),
                       x_max=int(cols[-1]), y_max=int(rows[-1]))


def upsample_box(box, feat_dims, img_dims):
    """Scale a feature-grid box to image coordinates.

    A feature cell spans ``s`` image pixels; the mapped box covers all image
    pixels of all cells in the source box, clamped to the image.
    """
    fh, fw = feat_dims
    ih, iw = img_dims
    if fh > ih or fw > iw:
        raise ValueError("feature dims exceed image dims")
    sx = iw / fw
    sy = ih / fh
    return BoundingBox(
        x_min=max(0, int(np.floor(box.x_min * sx))),
        y_min=max(0, int(np.floor(box.y_min * sy))),
        x_max=min(iw - 1, int(np.ceil((box.x_max + 1) * sx)) - 1),
        y_max=min(ih - 1, int(np.ceil((box.y_max + 1) * sy)) - 1),
    )


def iou(a, b):
    """Intersection over union with inclusive pixel counts."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def box_from_map(imap, region_size=1, ratio=0.2, threshold_on="region"):
    """Threshold -> largest component -> tight box, in feature coordinates.

    infoCAM-style maps are region-summed before thresholding by default;
    ``threshold_on="point"`` thresholds the raw point map instead.  If the
    thresholded mask is empty (possible only for non-finite inputs), the
    full-grid box is returned as a fallback.
    """
    scored = imap
    if (imap.kind in ("infocam", "infocam_plus") and region_size > 1
            and threshold_on == "region"):
        scored = cam_mod.region_sum(imap, region_size)
    mask = threshold_mask(scored, ratio)
    component = largest_connected_component(mask)
    if not component.any():
        h, w = imap.grid.shape
        return BoundingBox(0, 0, w - 1, h - 1)
    return tight_box(component)


def _prepare_image(net, image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == len(net.input_shape) - 1:
        image = image[None]
    return image


def localize(net, image, true_label, gt_box, map_kind="infocam",
             region_size=3, ratio=0.2, label_mode="gt",
             threshold_on="region", multi_label=False):
    """Full localization pipeline for one image and one target class.

    ``label_mode="gt"`` draws the box from the true label's map (the known-
    ground-truth-class metric); ``"top1"`` draws it from the predicted
    label's map.  The ground-truth-class correctness flag is always scored
    from the true label's box; the top-1 flag additionally requires a
    correct prediction.  For multi-label heads, "predicting" the target
    label means scoring it present (positive logit).
    """
    if not net.has_gap_head:
        raise ValueError("localization requires a conv->GAP->dense network")
    x = _prepare_image(net, image)
    logits, fmaps = forward(net, x)
    weights = net.final_weights
    img_dims = x.shape[-2:]

    if multi_label:
        predicted_label = true_label if logits[true_label] > 0 else -1
    else:
        predicted_label = int(np.argmax(logits))

    def boxed(label):
        imap = cam_mod.point_map(fmaps, weights, label, map_kind)
        feat_box = box_from_map(imap, region_size, ratio, threshold_on)
        return upsample_box(feat_box, imap.grid.shape, img_dims)

    true_box = boxed(true_label)
    true_iou = iou(true_box, gt_box)
    gt_loc_correct = true_iou > 0.5
    top1_loc_correct = bool(predicted_label == true_label and gt_loc_correct)

    if label_mode == "gt" or predicted_label in (true_label, -1):
        predicted_box, box_iou = true_box, true_iou
    elif label_mode == "top1":
        predicted_box = boxed(predicted_label)
        box_iou = iou(predicted_box, gt_box)
    else:
        raise ValueError(f"unknown label_mode {label_mode!r}")

    return LocalizationResult(
        predicted_box=predicted_box, gt_box=gt_box, iou=float(box_iou),
        gt_loc_correct=bool(gt_loc_correct),
        top1_loc_correct=top1_loc_correct,
        predicted_label=int(predicted_label), true_label=int(true_label))


def score_suite(results):
    """Fractions of results with each correctness flag: (gt_loc, top1_loc)."""
    if not results:
        raise ValueError("cannot score an empty result list")
    gt = np.mean([r.gt_loc_correct for r in results])
    top1 = np.mean([r.top1_loc_correct for r in results])
    return float(gt), float(top1)
