"""Scale proposal network: histogram prediction under image-level supervision.

The network is a small fully convolutional stack (valid padding, two 2x
poolings, total stride 4) whose 1x1 head emits one channel per histogram
bin; a global max pool turns the per-location responses into a fixed-length
logit vector whatever the input size. Training needs only the image-level
ground-truth histogram: sigmoid cross entropy on the pooled logits, so the
gradient reaches exactly one heatmap location per channel, the argmax. That
argmax routing is what makes hard negatives self-selecting: wherever the
strongest spurious response lives, that is the location that gets pushed
down.

Valid padding keeps the heatmap honest: a constant image produces a
spatially constant heatmap, and translating content by a stride multiple
leaves the inferred histogram exactly unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError
from .histogram import (
    HistogramSpec,
    LandmarkBoxOffsets,
    ScaleHistogram,
    gt_histogram,
)
from .images import resize_long_side, write_pgm
from .nn import (
    SGD,
    Adam,
    Conv2d,
    GlobalMaxPool,
    MaxPool2,
    Network,
    ReLU,
    sigmoid,
    sigmoid_ce_loss,
)
from .synthgen import Scene, glyph_offsets


@dataclass(frozen=True)
class SpnConfig:
    """Architecture plus the training recipe tuned for the synthetic corpus.

    input_center / input_scale form the fixed affine transform applied to
    pixel values before the first convolution, at training and inference
    alike. Raw [0, 1] pixels carry a large DC component that lets early
    SGD steps kill entire ReLU layers; centering removes it. head_bias_init
    starts the output near the corpus base rate so the first gradients
    carry per-image shape instead of a global offset.

    The global max pool routes each channel's gradient through a single
    cell per step, so per-example gradients are sparse and heavy-tailed.
    Plain SGD crawls on that diet, and momentum SGD amplifies it into a
    runaway on corpora of a few thousand images (velocity locks onto a
    shared direction and floods the ReLUs). Adam's per-parameter moment
    tracking turns the bursts into steady steps bounded by the learning
    rate, so it is the default; adam_beta2 is lowered to 0.99 to track
    the bursty per-channel traffic quickly. momentum applies only when
    optimizer is "sgd".
    """

    hist_spec: HistogramSpec = HistogramSpec(3.0, 7.0, 40)
    input_long_side: int = 160
    channels: Tuple[int, int, int, int] = (8, 16, 32, 32)
    sigma: float = 0.4
    input_center: float = 0.5
    input_scale: float = 1.0
    head_bias_init: float = -1.0
    optimizer: str = "adam"
    learning_rate: float = 0.002
    adam_beta2: float = 0.99
    momentum: float = 0.0
    iterations: int = 24000

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ConfigError(f"need 4 positive channel widths, got {self.channels}")
        if self.input_long_side < 40:
            raise ConfigError(
                f"input long side {self.input_long_side} below the receptive field"
            )
        if self.input_scale == 0:
            raise ConfigError("input_scale must be nonzero")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ScaleHeatmap:
    """Pre-pooling responses, one channel per histogram bin."""

    values: np.ndarray  # (n, h', w') logits
    stride: int

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"heatmap must be (n, h, w), got {self.values.shape}")


def build_spn(cfg: SpnConfig, seed: int = 0) -> Network:
    """conv5-pool-conv5-pool-conv3-conv3 trunk, 1x1 head, global max pool."""
    c0, c1, c2, c3 = cfg.channels
    n = cfg.hist_spec.n
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B)))
    net = Network([
        Conv2d.create(rng, 1, c0, 5, 5, stride=1, pad=0),
        ReLU(),
        MaxPool2(),
        Conv2d.create(rng, c0, c1, 5, 5, stride=1, pad=0),
        ReLU(),
        MaxPool2(),
        Conv2d.create(rng, c1, c2, 3, 3, stride=1, pad=0),
        ReLU(),
        Conv2d.create(rng, c2, c3, 3, 3, stride=1, pad=0),
        ReLU(),
        Conv2d.create(rng, c3, n, 1, 1, stride=1, pad=0),
        GlobalMaxPool(),
    ])
    net.layers[-2].bias[:] = cfg.head_bias_init
    return net


def fill_ignore_regions(image: np.ndarray, rects: Sequence[Tuple[float, float, float, float]],
                        rng: np.random.Generator) -> np.ndarray:
    """Copy of the image with each rect replaced by per-pixel uniform noise."""
    if not rects:
        return image
    out = image.copy()
    h, w = out.shape
    for (x, y, rw, rh) in rects:
        c0 = max(0, int(math.floor(x)))
        r0 = max(0, int(math.floor(y)))
        c1 = min(w, int(math.ceil(x + rw)))
        r1 = min(h, int(math.ceil(y + rh)))
        if r0 < r1 and c0 < c1:
            out[r0:r1, c0:c1] = rng.uniform(0.0, 1.0, size=(r1 - r0, c1 - c0)).astype(
                out.dtype
            )
    return out


def train_spn(
    cfg: SpnConfig,
    dataset: Sequence[Scene],
    seed: int,
    offsets: Optional[LandmarkBoxOffsets] = None,
) -> Tuple[Network, List[float]]:
    """Plain SGD, one image per step, sampled uniformly with replacement.

    Targets are ground-truth histograms of the landmark-derived face sizes;
    ignore regions are refilled with fresh random noise every step so the
    network cannot key on their content. Returns the network and the
    per-iteration loss log.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    off = offsets if offsets is not None else glyph_offsets()
    net = build_spn(cfg, seed=seed)
    opt = SGD(net.params(), lr=cfg.learning_rate, momentum=cfg.momentum)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7A)))

    # precompute inputs and targets; the ignore fill stays per-iteration
    inputs = []
    targets = []
    for scene in dataset:
        img, factor = resize_long_side(scene.image, cfg.input_long_side)
        sizes = scene.annotation.face_sizes(off)
        hist = gt_histogram(cfg.hist_spec, sizes, cfg.sigma)
        inputs.append(img.astype(np.float32))
        targets.append(hist.values.astype(np.float32))

    losses: List[float] = []
    for _ in range(cfg.iterations):
        i = int(rng.integers(len(dataset)))
        img = fill_ignore_regions(inputs[i], dataset[i].annotation.ignore_rects, rng)
        x = (img - cfg.input_center) * cfg.input_scale
        logits = net.forward(x[None, :, :])
        loss, dlogits = sigmoid_ce_loss(logits, targets[i])
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {len(losses)}")
        net.backward(dlogits)
        opt.step(net.grads())
        losses.append(loss)
    return net, losses


def infer_histogram(
    net: Network, image: np.ndarray, cfg: SpnConfig
) -> Tuple[ScaleHistogram, ScaleHeatmap]:
    """Resize to the configured long side, center and scale, forward, sigmoid."""
    if image.ndim != 2 or min(image.shape) < 1:
        raise ValueError(f"degenerate image shape {image.shape}")
    resized, _ = resize_long_side(image, cfg.input_long_side)
    x = (resized.astype(np.float32) - cfg.input_center) * cfg.input_scale
    logits = net.forward(x[None, :, :])
    gmp = net.layers[-1]
    if not isinstance(gmp, GlobalMaxPool):
        raise ValueError("network does not end in global max pooling")
    heatmap = ScaleHeatmap(values=gmp.last_input, stride=net.total_stride())
    values = sigmoid(logits.astype(np.float64))
    return ScaleHistogram(spec=cfg.hist_spec, values=values), heatmap


def write_training_log(path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, str(float(loss))])


def export_heatmap(heatmap: ScaleHeatmap, out_dir, stem: str) -> None:
    """One min-max scaled PGM per channel plus a CSV of the raw logits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = heatmap.values.shape[0]
    for ch in range(n):
        plane = heatmap.values[ch].astype(np.float64)
        lo, hi = plane.min(), plane.max()
        scaled = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
        write_pgm(out_dir / f"{stem}_bin{ch + 1:02d}.pgm", scaled)
    with open(out_dir / f"{stem}_heatmap.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "row", "col", "value"])
        for ch in range(n):
            for r in range(heatmap.values.shape[1]):
                for c in range(heatmap.values.shape[2]):
                    w.writerow([ch + 1, r, c, str(float(heatmap.values[ch, r, c]))])
