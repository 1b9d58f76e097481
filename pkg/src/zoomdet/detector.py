"""Single-scale, single-anchor face detector and cross-zoom fusion.

The detector covers exactly one octave of face sizes. Its one anchor sits at
the geometric mean of that range, so any face the zoom planner centers into
the range is within half an octave of the anchor. The head emits, per
heatmap cell, one classification logit against the anchor centered at that
cell plus three box regression values (dx, dy in anchor units and the log2
ratio of side to anchor).

Label rule: a cell is positive iff some face with size inside the covered
range overlaps its anchor with IoU >= 0.5. Faces outside the range are
plain negatives. Two refinements guard the boundaries, both configurable:
sizes within a small dead zone around the range edges mark their cells as
ignore instead (set deadzone_octaves=0 for the hard binary rule), and cells
with IoU in [0.3, 0.5) against a positive-eligible face are ignored rather
than treated as background. Ignore regions exclude their cells from both
classes.

Training mirrors deployment: every training patch is a random zoom of a
scene chosen so one face lands inside the covered range, because at test
time the detector only ever sees images the zoom planner has resized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError
from .histogram import LandmarkBoxOffsets, SquareBox
from .images import resize_by_factor
from .nn import (
    SGD,
    Conv2d,
    MaxPool2,
    Network,
    ReLU,
    sigmoid,
    sigmoid_ce_elements,
    smooth_l1,
)
from .proposal import DetectorRange, ZoomAction
from .synthgen import Scene, glyph_offsets

# decoded offsets are clamped to these spans (in anchor units for dx/dy,
# octaves for dlog2 side) so every reported box stays near the anchor
MAX_CENTER_OFFSET = 1.0
MAX_LOG2_SIDE_OFFSET = 1.0

IGNORE_IOU = 0.3


@dataclass(frozen=True)
class AnchorSpec:
    anchor_side: float
    stride: int
    range: DetectorRange

    def __post_init__(self):
        g = self.range.geometric_mean
        if abs(self.anchor_side - g) > 1e-9 * g:
            raise ValueError(
                f"anchor side {self.anchor_side} must equal the geometric mean "
                f"{g} of the range"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @classmethod
    def for_range(cls, rng: DetectorRange, stride: int = 4) -> "AnchorSpec":
        return cls(anchor_side=rng.geometric_mean, stride=stride, range=rng)


@dataclass(frozen=True)
class Detection:
    box: SquareBox
    score: float
    zoom_factor: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectorConfig:
    anchor: AnchorSpec = AnchorSpec.for_range(DetectorRange(24.0, 48.0))
    channels: Tuple[int, int, int, int] = (8, 16, 24, 32)
    patch_size: int = 112
    learning_rate: float = 0.02
    momentum: float = 0.9
    iterations: int = 8000
    deadzone_octaves: float = 0.25
    neg_per_pos: int = 3
    min_negatives: int = 16
    background_prob: float = 0.15
    center_jitter: float = 16.0
    reg_weight: float = 1.0
    score_threshold: float = 0.5

    def __post_init__(self):
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ConfigError(f"need 4 positive channel widths, got {self.channels}")
        if not 0.0 <= self.deadzone_octaves < 0.5:
            raise ConfigError(
                f"dead zone must be in [0, 0.5) octaves, got {self.deadzone_octaves}"
            )


def iou(a: SquareBox, b: SquareBox) -> float:
    iw = min(a.cx + a.side / 2, b.cx + b.side / 2) - max(a.cx - a.side / 2, b.cx - b.side / 2)
    ih = min(a.cy + a.side / 2, b.cy + b.side / 2) - max(a.cy - a.side / 2, b.cy - b.side / 2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.side * a.side + b.side * b.side - inter)


def build_detector(cfg: DetectorConfig, seed: int = 0) -> Network:
    """Four 5x5 conv stages (same padding), two 2x pools, 4-channel 1x1 head."""
    c0, c1, c2, c3 = cfg.channels
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD7)))
    return Network([
        Conv2d.create(rng, 1, c0, 5, 5, stride=1, pad=2),
        ReLU(),
        MaxPool2(),
        Conv2d.create(rng, c0, c1, 5, 5, stride=1, pad=2),
        ReLU(),
        MaxPool2(),
        Conv2d.create(rng, c1, c2, 5, 5, stride=1, pad=2),
        ReLU(),
        Conv2d.create(rng, c2, c3, 5, 5, stride=1, pad=2),
        ReLU(),
        Conv2d.create(rng, c3, 4, 1, 1, stride=1, pad=0),
    ])


def _face_iou_grid(box: SquareBox, hw: Tuple[int, int], spec: AnchorSpec) -> np.ndarray:
    """IoU of the anchor at every cell against one face box."""
    h, w = hw
    half = spec.anchor_side / 2.0
    ax = np.arange(w, dtype=np.float64) * spec.stride
    ay = np.arange(h, dtype=np.float64) * spec.stride
    iw = np.minimum(ax + half, box.cx + box.side / 2) - np.maximum(ax - half, box.cx - box.side / 2)
    ih = np.minimum(ay + half, box.cy + box.side / 2) - np.maximum(ay - half, box.cy - box.side / 2)
    inter = np.clip(ih, 0, None)[:, None] * np.clip(iw, 0, None)[None, :]
    union = spec.anchor_side ** 2 + box.side ** 2 - inter
    return inter / union


def assign_labels(
    hw: Tuple[int, int],
    faces: Sequence[SquareBox],
    ignore_rects: Sequence[Tuple[float, float, float, float]],
    spec: AnchorSpec,
    deadzone_octaves: float = 0.25,
    face_usable: Optional[Sequence[bool]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell labels (1 positive, 0 negative, -1 ignore) and regression targets.

    face_usable marks faces that may produce positives (e.g. fully visible
    in the current crop); unusable faces only blank out their cells.
    """
    h, w = hw
    labels = np.zeros((h, w), dtype=np.int8)
    reg = np.zeros((3, h, w), dtype=np.float32)
    best_iou = np.zeros((h, w), dtype=np.float64)
    ignore_mask = np.zeros((h, w), dtype=bool)
    if face_usable is None:
        face_usable = [True] * len(faces)

    rng_lo, rng_hi = spec.range.smin, spec.range.smax
    core_lo = rng_lo * 2.0 ** deadzone_octaves
    core_hi = rng_hi * 2.0 ** -deadzone_octaves
    dead_lo = rng_lo * 2.0 ** -deadzone_octaves
    dead_hi = rng_hi * 2.0 ** deadzone_octaves

    for box, usable in zip(faces, face_usable):
        grid = _face_iou_grid(box, hw, spec)
        in_core = core_lo <= box.side <= core_hi
        in_dead = dead_lo <= box.side <= dead_hi and not in_core
        if usable and in_core:
            hit = (grid >= 0.5) & (grid > best_iou)
            if hit.any():
                ys, xs = np.nonzero(hit)
                labels[ys, xs] = 1
                best_iou[ys, xs] = grid[ys, xs]
                reg[0, ys, xs] = (box.cx - xs * spec.stride) / spec.anchor_side
                reg[1, ys, xs] = (box.cy - ys * spec.stride) / spec.anchor_side
                reg[2, ys, xs] = math.log2(box.side / spec.anchor_side)
            ignore_mask |= grid >= IGNORE_IOU
        elif in_dead or (in_core and not usable):
            ignore_mask |= grid >= IGNORE_IOU
        # sizes clearly outside the range leave their cells negative

    for (x, y, rw, rh) in ignore_rects:
        half = spec.anchor_side / 2.0
        ax = np.arange(w, dtype=np.float64) * spec.stride
        ay = np.arange(h, dtype=np.float64) * spec.stride
        iw_ = np.minimum(ax + half, x + rw) - np.maximum(ax - half, x)
        ih_ = np.minimum(ay + half, y + rh) - np.maximum(ay - half, y)
        inter = np.clip(ih_, 0, None)[:, None] * np.clip(iw_, 0, None)[None, :]
        ignore_mask |= inter / (spec.anchor_side ** 2) >= 0.3

    labels[ignore_mask & (labels == 0)] = -1
    return labels, reg


def _training_patch(
    scene: Scene,
    boxes: Sequence[SquareBox],
    cfg: DetectorConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, List[SquareBox], List[bool], List[Tuple[float, float, float, float]]]:
    """Zoomed random crop of the scene plus the transformed annotations.

    When a face is available it is zoomed into the covered core of the range
    and the crop centers near it; otherwise the crop is a random zoom of
    background.
    """
    dz = cfg.deadzone_octaves
    anchor = cfg.anchor.anchor_side
    use_face = len(boxes) > 0 and rng.uniform() >= cfg.background_prob
    if use_face:
        target = boxes[int(rng.integers(len(boxes)))]
        u = rng.uniform(-(0.5 - dz), 0.5 - dz)
        factor = anchor * 2.0 ** u / target.side
        center = (target.cx * factor, target.cy * factor)
    else:
        factor = 2.0 ** rng.uniform(-1.0, 1.0)
        center = (scene.image.shape[1] * factor / 2, scene.image.shape[0] * factor / 2)

    zoomed = resize_by_factor(scene.image, factor)
    zh, zw = zoomed.shape
    win_h, win_w = min(cfg.patch_size, zh), min(cfg.patch_size, zw)
    jx, jy = rng.uniform(-cfg.center_jitter, cfg.center_jitter, size=2)
    c0 = int(np.clip(round(center[0] + jx - win_w / 2), 0, zw - win_w))
    r0 = int(np.clip(round(center[1] + jy - win_h / 2), 0, zh - win_h))
    patch = zoomed[r0:r0 + win_h, c0:c0 + win_w]

    out_boxes: List[SquareBox] = []
    usable: List[bool] = []
    for b in boxes:
        bx, by, bs = b.cx * factor - c0, b.cy * factor - r0, b.side * factor
        if bx + bs / 2 <= 0 or by + bs / 2 <= 0 or bx - bs / 2 >= win_w or by - bs / 2 >= win_h:
            continue
        vis_w = min(bx + bs / 2, win_w) - max(bx - bs / 2, 0)
        vis_h = min(by + bs / 2, win_h) - max(by - bs / 2, 0)
        out_boxes.append(SquareBox(bx, by, bs))
        usable.append(vis_w * vis_h >= 0.7 * bs * bs)

    out_ignore = []
    for (x, y, rw, rh) in scene.annotation.ignore_rects:
        out_ignore.append((x * factor - c0, y * factor - r0, rw * factor, rh * factor))
    return patch, out_boxes, usable, out_ignore


def train_detector(
    dataset: Sequence[Scene],
    cfg: DetectorConfig,
    seed: int,
    offsets: Optional[LandmarkBoxOffsets] = None,
) -> Tuple[Network, List[float]]:
    """SGD on zoomed crops; classification CE plus smooth-L1 box regression.

    All positive cells train every step; negatives are subsampled to
    neg_per_pos per positive (at least min_negatives) to keep the classes
    balanced. Returns the network and per-iteration loss log.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    off = offsets if offsets is not None else glyph_offsets()
    net = build_detector(cfg, seed=seed)
    opt = SGD(net.params(), lr=cfg.learning_rate, momentum=cfg.momentum)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDE)))
    all_boxes = [scene.annotation.face_boxes(off) for scene in dataset]

    losses: List[float] = []
    for _ in range(cfg.iterations):
        i = int(rng.integers(len(dataset)))
        patch, boxes, usable, ignore = _training_patch(dataset[i], all_boxes[i], cfg, rng)
        out = net.forward(patch.astype(np.float32)[None, :, :])
        hw = out.shape[1:]
        labels, reg_targets = assign_labels(
            hw, boxes, ignore, cfg.anchor, cfg.deadzone_octaves, usable
        )

        pos = labels == 1
        neg = labels == 0
        n_pos = int(pos.sum())
        neg_idx = np.flatnonzero(neg.ravel())
        n_neg = min(len(neg_idx), max(cfg.min_negatives, cfg.neg_per_pos * n_pos))
        if n_neg > 0:
            chosen = rng.choice(neg_idx, size=n_neg, replace=False)
        else:
            chosen = np.empty(0, dtype=np.int64)

        cls_targets = pos.astype(np.float32)
        ce_loss, ce_grad = sigmoid_ce_elements(out[0], cls_targets)
        sel = pos.copy().ravel()
        sel[chosen] = True
        sel = sel.reshape(hw)
        denom = max(1, n_pos + n_neg)
        cls_loss = float(ce_loss[sel].sum() / denom)

        dout = np.zeros_like(out)
        dout[0][sel] = ce_grad[sel] / denom

        reg_loss = 0.0
        if n_pos > 0:
            diff = out[1:4][:, pos] - reg_targets[:, pos]
            l, g = smooth_l1(diff)
            reg_loss = float(l.mean()) * cfg.reg_weight
            dout[1:4][:, pos] = (g / l.size * cfg.reg_weight).astype(out.dtype)

        loss = cls_loss + reg_loss
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {len(losses)}")
        net.backward(dout)
        opt.step(net.grads())
        losses.append(loss)
    return net, losses


def detect_single_scale(
    net: Network, image: np.ndarray, spec: AnchorSpec, score_threshold: float = 0.5
) -> List[Detection]:
    """Decode every heatmap cell whose sigmoid score exceeds the threshold."""
    out = net.forward(image.astype(np.float32)[None, :, :])
    if out.shape[0] != 4:
        raise ValueError(f"detector head must emit 4 channels, got {out.shape[0]}")
    probs = sigmoid(out[0].astype(np.float64))
    dx = np.clip(out[1], -MAX_CENTER_OFFSET, MAX_CENTER_OFFSET)
    dy = np.clip(out[2], -MAX_CENTER_OFFSET, MAX_CENTER_OFFSET)
    ds = np.clip(out[3], -MAX_LOG2_SIDE_OFFSET, MAX_LOG2_SIDE_OFFSET)
    dets: List[Detection] = []
    for i, j in zip(*np.nonzero(probs > score_threshold)):
        cx = j * spec.stride + float(dx[i, j]) * spec.anchor_side
        cy = i * spec.stride + float(dy[i, j]) * spec.anchor_side
        side = spec.anchor_side * 2.0 ** float(ds[i, j])
        dets.append(Detection(box=SquareBox(cx, cy, side), score=float(probs[i, j])))
    return dets


def box_nms(dets: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy descending-score suppression; ties broken by smaller (y, x)."""
    order = sorted(dets, key=lambda d: (-d.score, d.box.cy, d.box.cx, d.box.side))
    kept: List[Detection] = []
    for cand in order:
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def detect_with_plan(
    net: Network,
    image: np.ndarray,
    plan: Sequence[ZoomAction],
    spec: AnchorSpec,
    score_threshold: float = 0.5,
    fusion_iou: float = 0.5,
) -> List[Detection]:
    """Detect at every planned zoom, unmap to original pixels, fuse with NMS."""
    merged: List[Detection] = []
    for action in plan:
        f = action.scale_factor
        resized = resize_by_factor(image, f)
        for d in detect_single_scale(net, resized, spec, score_threshold):
            merged.append(
                Detection(
                    box=SquareBox(d.box.cx / f, d.box.cy / f, d.box.side / f),
                    score=d.score,
                    zoom_factor=f,
                )
            )
    return box_nms(merged, fusion_iou)


def write_detections_csv(path, rows: Sequence[Tuple[str, Detection]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "cx", "cy", "side", "score", "zoom_factor"])
        for image_id, d in rows:
            w.writerow(
                [image_id, str(d.box.cx), str(d.box.cy), str(d.box.side),
                 str(d.score), str(d.zoom_factor)]
            )
