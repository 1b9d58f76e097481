"""From a scale histogram to a zoom plan.

The chain is smooth -> nms_1d -> select_proposals -> plan_zooms. Each
surviving peak names a face size believed present in the image; the zoom
plan resizes the image so that size lands exactly on the geometric mean of
the detector's covered range, which is the midpoint of the range in log
scale and so maximizes margin on both sides.

Window defaults: the detector covers one octave, and every zoom reaches
faces within half an octave of its target. Peaks closer than that half
octave collapse into one zoom anyway, so the NMS window defaults to a bit
under half an octave (4 bins at d=0.1) and smoothing stays light (3 bins);
wider windows merge face pairs between 0.5 and 1 octave apart into a single
zoom that covers neither. Both windows are configurable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .histogram import ScaleHistogram

DEFAULT_SMOOTH_WINDOW = 3
DEFAULT_NMS_WINDOW = 4
DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_MAX_PROPOSALS = 4


@dataclass(frozen=True)
class ScaleProposal:
    """A histogram peak: candidate face size (log2 pixels) and its confidence."""

    log2_size: float
    confidence: float


@dataclass(frozen=True)
class DetectorRange:
    """One-octave size range [smin, smax] the single-scale detector covers."""

    smin: float
    smax: float

    def __post_init__(self):
        if not self.smin > 0:
            raise ValueError(f"smin must be positive, got {self.smin}")
        if abs(self.smax - 2.0 * self.smin) > 1e-9 * self.smin:
            raise ValueError(
                f"range must span exactly one octave (smax = 2*smin), "
                f"got ({self.smin}, {self.smax})"
            )

    @property
    def geometric_mean(self) -> float:
        return math.sqrt(self.smin * self.smax)


@dataclass(frozen=True)
class ZoomAction:
    scale_factor: float
    source_proposal: ScaleProposal

    def __post_init__(self):
        if not self.scale_factor > 0:
            raise ValueError(f"scale factor must be positive, got {self.scale_factor}")


@dataclass(frozen=True)
class ProposalParams:
    """Knobs of the histogram-to-plan chain."""

    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    nms_window: int = DEFAULT_NMS_WINDOW
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    max_proposals: int = DEFAULT_MAX_PROPOSALS


def smooth(h: ScaleHistogram, window_bins: int) -> ScaleHistogram:
    """Centered moving average; edge bins average over in-range neighbors only."""
    n = h.spec.n
    if window_bins % 2 == 0 or window_bins < 1:
        raise ValueError(f"smoothing window must be odd and positive, got {window_bins}")
    if window_bins > n:
        raise ValueError(f"smoothing window {window_bins} exceeds bin count {n}")
    r = window_bins // 2
    v = h.values
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        lo = max(0, i - r)
        hi = min(n, i + r + 1)
        out[i] = v[lo:hi].mean()
    return ScaleHistogram(spec=h.spec, values=out)


def nms_1d(h: ScaleHistogram, window_bins: int) -> List[ScaleProposal]:
    """Peaks of the histogram: bins that dominate everything within the window.

    A bin survives iff its value is positive and at least as large as every
    value within window_bins on either side; ties go to the smaller index
    (strict comparison against the left side, non-strict against the right).
    """
    if window_bins < 1:
        raise ValueError(f"nms window must be >= 1, got {window_bins}")
    v = h.values
    n = h.spec.n
    peaks = []
    for i in range(n):
        if v[i] <= 0.0:
            continue
        left = v[max(0, i - window_bins):i]
        right = v[i + 1:i + window_bins + 1]
        if np.all(left < v[i]) and np.all(right <= v[i]):
            peaks.append(
                ScaleProposal(log2_size=h.spec.bin_center(i + 1), confidence=float(v[i]))
            )
    return peaks


def select_proposals(
    peaks: List[ScaleProposal], threshold: float, max_count: int
) -> List[ScaleProposal]:
    """Keep peaks with confidence strictly above the threshold, best first."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    kept = [p for p in peaks if p.confidence > threshold]
    kept.sort(key=lambda p: -p.confidence)
    return kept[:max_count]


def plan_zooms(proposals: List[ScaleProposal], rng: DetectorRange) -> List[ZoomAction]:
    """One zoom per proposal, placing its size at the range's geometric mean."""
    g = rng.geometric_mean
    ordered = sorted(proposals, key=lambda p: -p.confidence)
    return [
        ZoomAction(scale_factor=g / (2.0 ** p.log2_size), source_proposal=p)
        for p in ordered
    ]


def plan_from_histogram(
    h: ScaleHistogram, params: ProposalParams, rng: DetectorRange
) -> Tuple[List[ScaleProposal], List[ZoomAction]]:
    """Full chain; returns the selected proposals and their zoom actions."""
    smoothed = smooth(h, params.smooth_window)
    peaks = nms_1d(smoothed, params.nms_window)
    selected = select_proposals(peaks, params.threshold, params.max_proposals)
    return selected, plan_zooms(selected, rng)


def write_proposals_csv(path, plan: List[ZoomAction]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["proposal_rank", "log2_size", "size_px", "confidence", "zoom_factor"])
        for rank, act in enumerate(plan, start=1):
            p = act.source_proposal
            w.writerow(
                [rank, str(p.log2_size), str(2.0 ** p.log2_size),
                 str(p.confidence), str(act.scale_factor)]
            )
