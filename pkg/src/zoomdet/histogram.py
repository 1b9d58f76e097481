"""Scale histograms: log2-binned face-size probability vectors.

A histogram divides the size range [2^s0, 2^sn] pixels into n bins of equal
log2 width d = (sn - s0) / n. Bin i (1-based) covers sizes
[2^(s0+(i-1)d), 2^(s0+i*d)). Each value is the probability that the image
contains a face of that size. Ground-truth vectors are built by sampling a
Gaussian in log2-size space at every bin center and combining faces with an
element-wise maximum, which is coherent with the global max pooling used by
the proposal network.

Face boxes are never ingested directly: they always derive from five facial
landmarks through a shared offset transform (box_from_landmarks), so the
annotation file format stores landmarks and ignore regions only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import AnnotationError


@dataclass(frozen=True)
class HistogramSpec:
    """Log2 bin grid: s0/sn are log2 of the smallest/largest face size."""

    s0: float
    sn: float
    n: int

    def __post_init__(self):
        if not (self.s0 < self.sn):
            raise ValueError(f"need s0 < sn, got s0={self.s0} sn={self.sn}")
        if self.n < 1:
            raise ValueError(f"need at least one bin, got n={self.n}")

    @property
    def d(self) -> float:
        return (self.sn - self.s0) / self.n

    def bin_edges(self, i: int) -> Tuple[float, float]:
        """Left and right log2 edges of 1-based bin i."""
        if not 1 <= i <= self.n:
            raise ValueError(f"bin index {i} outside 1..{self.n}")
        return (self.s0 + (i - 1) * self.d, self.s0 + i * self.d)

    def bin_center(self, i: int) -> float:
        left, right = self.bin_edges(i)
        return 0.5 * (left + right)

    def centers(self) -> np.ndarray:
        """All bin centers as a vector, index 0 holding bin 1."""
        return self.s0 + (np.arange(self.n) + 0.5) * self.d


@dataclass
class ScaleHistogram:
    spec: HistogramSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n,):
            raise ValueError(
                f"histogram length {self.values.shape} does not match n={self.spec.n}"
            )
        if np.any(~np.isfinite(self.values)):
            raise ValueError("histogram values must be finite")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("histogram values must lie in [0, 1]")


@dataclass(frozen=True)
class Landmarks5:
    """Five (x, y) points: left eye, right eye, nose, left mouth, right mouth."""

    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) != 5:
            raise ValueError(f"need exactly 5 landmarks, got {len(self.points)}")
        for p in self.points:
            if len(p) != 2 or not all(math.isfinite(c) for c in p):
                raise ValueError(f"bad landmark point {p!r}")

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class LandmarkBoxOffsets:
    """Shared calibration of the landmark-to-box transform.

    ox and oy are fractions of the derived side length; os multiplies the
    population standard deviation of the landmark y coordinates.
    """

    ox: float = 0.0
    oy: float = 0.0
    os: float = 1.0

    def __post_init__(self):
        if not self.os > 0:
            raise ValueError(f"os must be positive, got {self.os}")


@dataclass(frozen=True)
class SquareBox:
    cx: float
    cy: float
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"box side must be positive, got {self.side}")


def box_from_landmarks(lm: Landmarks5, off: LandmarkBoxOffsets) -> SquareBox:
    """Square box from five landmarks.

    side = os * population std of the y coordinates; the center is the
    landmark centroid shifted by (ox, oy) fractions of that side. All five
    y coordinates identical would give a zero-sized box, which is rejected.
    """
    ys = lm.ys
    std_y = float(np.sqrt(np.mean((ys - ys.mean()) ** 2)))
    if std_y == 0.0:
        raise AnnotationError("degenerate landmarks: all y coordinates identical")
    side = std_y * off.os
    cx = float(lm.xs.mean()) + off.ox * side
    cy = float(ys.mean()) + off.oy * side
    return SquareBox(cx=cx, cy=cy, side=side)


def gaussian_label(face_log2_size: float, bin_center: float, sigma: float) -> float:
    """Soft label for one bin: Gaussian in log2-size distance from the center."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = bin_center - face_log2_size
    return math.exp(-(d * d) / (2.0 * sigma * sigma))


def gt_histogram(
    spec: HistogramSpec, face_sizes: Sequence[float], sigma: float
) -> ScaleHistogram:
    """Ground-truth histogram: per-bin max of the Gaussian labels of all faces.

    Faces whose log2 size falls outside [s0, sn] still contribute mass to
    in-range bins; only the bin grid is clipped, never the face.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    values = np.zeros(spec.n, dtype=np.float64)
    centers = spec.centers()
    for s in face_sizes:
        if not s > 0:
            raise AnnotationError(f"face size must be positive, got {s}")
        g = np.exp(-((centers - math.log2(s)) ** 2) / (2.0 * sigma * sigma))
        np.maximum(values, g, out=values)
    return ScaleHistogram(spec=spec, values=values)


def merge_max(h1: ScaleHistogram, h2: ScaleHistogram) -> ScaleHistogram:
    if h1.spec != h2.spec:
        raise ValueError(f"histogram specs differ: {h1.spec} vs {h2.spec}")
    return ScaleHistogram(spec=h1.spec, values=np.maximum(h1.values, h2.values))


# --- annotation records -----------------------------------------------------

@dataclass
class ImageAnnotation:
    """One image: path, landmark sets (one per face), ignore rectangles.

    Ignore rectangles are (x, y, w, h) in pixels; they mark areas excluded
    from supervision.
    """

    image_path: str
    landmark_sets: List[Landmarks5]
    ignore_rects: List[Tuple[float, float, float, float]]

    def face_boxes(self, off: LandmarkBoxOffsets) -> List[SquareBox]:
        return [box_from_landmarks(lm, off) for lm in self.landmark_sets]

    def face_sizes(self, off: LandmarkBoxOffsets) -> List[float]:
        return [b.side for b in self.face_boxes(off)]


def write_annotations(path, records: Sequence[ImageAnnotation]) -> None:
    """One JSON object per line: {"image", "landmarks", "ignore"}."""
    with open(path, "w") as f:
        for rec in records:
            obj = {
                "image": rec.image_path,
                "landmarks": [[list(p) for p in lm.points] for lm in rec.landmark_sets],
                "ignore": [list(r) for r in rec.ignore_rects],
            }
            f.write(json.dumps(obj) + "\n")


def read_annotations(path) -> List[ImageAnnotation]:
    out = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = ImageAnnotation(
                    image_path=obj["image"],
                    landmark_sets=[
                        Landmarks5(points=tuple(tuple(p) for p in lm))
                        for lm in obj["landmarks"]
                    ],
                    ignore_rects=[tuple(r) for r in obj.get("ignore", [])],
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise AnnotationError(f"{path}:{line_no}: bad annotation record: {e}")
            out.append(rec)
    return out


def write_histogram_csv(path, hist: ScaleHistogram) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_index", "left_edge_log2", "right_edge_log2", "value"])
        for i in range(1, hist.spec.n + 1):
            left, right = hist.spec.bin_edges(i)
            w.writerow([i, str(left), str(right), str(hist.values[i - 1])])
