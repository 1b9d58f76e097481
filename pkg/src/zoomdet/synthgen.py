"""Deterministic synthetic face-glyph scenes.

A face glyph is a filled disc of diameter `side` with two darker eye dots at
(+-side/5, -side/8) from the center, and a darker mouth bar centered at
(0, +side/4), half-width side/5 and half-height side/16. The glyph is scale
similar: the same shape at every size, so size is the only factor that
varies. Landmarks follow the glyph geometry exactly (eye centers, disc
center as the nose, mouth bar ends), which makes the landmark-to-box
transform invertible: glyph_offsets() returns the calibration under which
box_from_landmarks recovers the glyph side essentially exactly.

Scenes add value-noise backgrounds, plain distractor discs and rectangles
(face-like in tone but featureless), and optional ignore rectangles that
never contain faces. Everything derives from the spec's seed, so rendering
the same spec twice is bit identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .histogram import (
    ImageAnnotation,
    LandmarkBoxOffsets,
    Landmarks5,
    read_annotations,
    write_annotations,
)
from .images import bilinear_resize, read_image, write_pgm

# glyph geometry, as fractions of the side length
EYE_DX = 1.0 / 5.0
EYE_DY = -1.0 / 8.0
EYE_RADIUS = 1.0 / 10.0
MOUTH_DY = 1.0 / 4.0
MOUTH_HALF_W = 1.0 / 5.0
MOUTH_HALF_H = 1.0 / 16.0

# appearance bands: glyphs and distractors share the same tone range so
# distractors are genuine negatives, and the background never reaches it
BG_BASE = 0.60
DISC_VALUE = (0.15, 0.38)
FEATURE_DARKEN = (0.10, 0.20)


def glyph_landmark_fractions() -> np.ndarray:
    """The five landmark positions as (x, y) fractions of the side."""
    return np.array(
        [
            [-EYE_DX, EYE_DY],
            [+EYE_DX, EYE_DY],
            [0.0, 0.0],
            [-MOUTH_HALF_W, MOUTH_DY],
            [+MOUTH_HALF_W, MOUTH_DY],
        ]
    )


def glyph_offsets() -> LandmarkBoxOffsets:
    """Landmark-to-box calibration matching the glyph geometry."""
    ys = glyph_landmark_fractions()[:, 1]
    std = float(np.sqrt(np.mean((ys - ys.mean()) ** 2)))
    return LandmarkBoxOffsets(ox=0.0, oy=-float(ys.mean()), os=1.0 / std)


def glyph_landmarks(cx: float, cy: float, side: float) -> Landmarks5:
    pts = glyph_landmark_fractions() * side + np.array([cx, cy])
    return Landmarks5(points=tuple((float(x), float(y)) for x, y in pts))


@dataclass(frozen=True)
class FaceGlyph:
    cx: float
    cy: float
    side: float
    appearance_seed: int = 0


@dataclass(frozen=True)
class Distractor:
    kind: str  # "disc" or "rect"
    cx: float
    cy: float
    size: float


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    glyphs: Tuple[FaceGlyph, ...] = ()
    ignore_rects: Tuple[Tuple[float, float, float, float], ...] = ()
    distractors: Tuple[Distractor, ...] = ()
    noise_amp: float = 0.12
    noise_cell: int = 16
    seed: int = 0


@dataclass
class Scene:
    spec: SceneSpec
    image: np.ndarray
    annotation: ImageAnnotation
    truncated: List[bool] = field(default_factory=list)


def _box_iou(a: Tuple[float, float, float], b: Tuple[float, float, float]) -> float:
    """IoU of two square boxes given as (cx, cy, side)."""
    ax0, ay0 = a[0] - a[2] / 2, a[1] - a[2] / 2
    bx0, by0 = b[0] - b[2] / 2, b[1] - b[2] / 2
    iw = min(ax0 + a[2], bx0 + b[2]) - max(ax0, bx0)
    ih = min(ay0 + a[2], by0 + b[2]) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] ** 2 + b[2] ** 2 - inter)


def _fill_disc(img: np.ndarray, cx: float, cy: float, r: float, value: float) -> None:
    h, w = img.shape
    r0 = max(0, int(math.floor(cy - r)))
    r1 = min(h, int(math.ceil(cy + r)) + 1)
    c0 = max(0, int(math.floor(cx - r)))
    c1 = min(w, int(math.ceil(cx + r)) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    ys = np.arange(r0, r1)[:, None] + 0.5
    xs = np.arange(c0, c1)[None, :] + 0.5
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    img[r0:r1, c0:c1][mask] = value


def _fill_rect(img: np.ndarray, cx: float, cy: float,
               half_w: float, half_h: float, value: float) -> None:
    h, w = img.shape
    r0 = max(0, int(math.floor(cy - half_h)))
    r1 = min(h, int(math.ceil(cy + half_h)) + 1)
    c0 = max(0, int(math.floor(cx - half_w)))
    c1 = min(w, int(math.ceil(cx + half_w)) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    ys = np.arange(r0, r1)[:, None] + 0.5
    xs = np.arange(c0, c1)[None, :] + 0.5
    mask = (np.abs(xs - cx) <= half_w) & (np.abs(ys - cy) <= half_h)
    img[r0:r1, c0:c1][mask] = value


def _draw_glyph(img: np.ndarray, g: FaceGlyph) -> None:
    rng = np.random.default_rng(g.appearance_seed)
    disc_v = float(rng.uniform(*DISC_VALUE))
    feat_v = max(0.02, disc_v - float(rng.uniform(*FEATURE_DARKEN)))
    s = g.side
    _fill_disc(img, g.cx, g.cy, s / 2.0, disc_v)
    _fill_disc(img, g.cx - EYE_DX * s, g.cy + EYE_DY * s, EYE_RADIUS * s, feat_v)
    _fill_disc(img, g.cx + EYE_DX * s, g.cy + EYE_DY * s, EYE_RADIUS * s, feat_v)
    _fill_rect(img, g.cx, g.cy + MOUTH_DY * s, MOUTH_HALF_W * s, MOUTH_HALF_H * s, feat_v)


def _value_noise(rng: np.random.Generator, h: int, w: int,
                 amp: float, cell: int) -> np.ndarray:
    if amp <= 0:
        return np.full((h, w), BG_BASE, dtype=np.float32)
    gh = h // cell + 2
    gw = w // cell + 2
    grid = rng.uniform(BG_BASE - amp, BG_BASE + amp, size=(gh, gw)).astype(np.float32)
    up = bilinear_resize(grid, gh * cell, gw * cell)
    return up[:h, :w]


def render_scene(spec: SceneSpec) -> Scene:
    """Render the scene; rejects specs whose glyph boxes overlap beyond IoU 0.3."""
    boxes = [(g.cx, g.cy, g.side) for g in spec.glyphs]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            v = _box_iou(boxes[i], boxes[j])
            if v > 0.3:
                raise ValueError(
                    f"glyphs {i} and {j} overlap with IoU {v:.3f} > 0.3; spec rejected"
                )
    rng = np.random.default_rng(spec.seed)
    img = _value_noise(rng, spec.height, spec.width, spec.noise_amp, spec.noise_cell)
    for d in spec.distractors:
        v = float(rng.uniform(*DISC_VALUE))
        if d.kind == "disc":
            _fill_disc(img, d.cx, d.cy, d.size / 2.0, v)
        elif d.kind == "rect":
            _fill_rect(img, d.cx, d.cy, d.size / 2.0, d.size / 2.0, v)
        else:
            raise ValueError(f"unknown distractor kind {d.kind!r}")
    truncated = []
    for g in spec.glyphs:
        _draw_glyph(img, g)
        half = g.side / 2.0
        truncated.append(
            g.cx - half < 0 or g.cy - half < 0
            or g.cx + half > spec.width or g.cy + half > spec.height
        )
    ann = ImageAnnotation(
        image_path="",
        landmark_sets=[glyph_landmarks(g.cx, g.cy, g.side) for g in spec.glyphs],
        ignore_rects=list(spec.ignore_rects),
    )
    return Scene(spec=spec, image=img, annotation=ann, truncated=truncated)


@dataclass(frozen=True)
class DatasetConfig:
    train_count: int = 0
    test_count: int = 0
    image_width: int = 160
    image_height: int = 160
    size_min: float = 8.0
    size_max: float = 128.0
    max_faces: int = 3
    margin: float = 2.0
    ignore_prob: float = 0.25
    max_distractors: int = 2
    noise_amp: float = 0.12
    noise_cell: int = 16

    def __post_init__(self):
        if not (0 < self.size_min < self.size_max):
            raise ValueError(f"bad size bounds ({self.size_min}, {self.size_max})")
        lim = min(self.image_width, self.image_height) - 2 * self.margin
        if self.size_max > lim:
            raise ValueError(
                f"largest face {self.size_max} does not fit {self.image_width}x"
                f"{self.image_height} with margin {self.margin}"
            )


def _place_box(rng: np.random.Generator, cfg: DatasetConfig, side: float,
               taken: List[Tuple[float, float, float]], max_iou: float,
               tries: int = 60) -> Optional[Tuple[float, float]]:
    half = side / 2.0
    for _ in range(tries):
        cx = float(rng.uniform(half + cfg.margin, cfg.image_width - half - cfg.margin))
        cy = float(rng.uniform(half + cfg.margin, cfg.image_height - half - cfg.margin))
        if all(_box_iou((cx, cy, side), t) <= max_iou for t in taken):
            return cx, cy
    return None


def sample_scene_spec(cfg: DatasetConfig, rng: np.random.Generator) -> SceneSpec:
    n_faces = int(rng.integers(0, cfg.max_faces + 1))
    glyphs: List[FaceGlyph] = []
    taken: List[Tuple[float, float, float]] = []
    for _ in range(n_faces):
        side = float(2.0 ** rng.uniform(math.log2(cfg.size_min), math.log2(cfg.size_max)))
        pos = _place_box(rng, cfg, side, taken, max_iou=0.25)
        if pos is None:
            continue
        glyphs.append(FaceGlyph(pos[0], pos[1], side,
                                appearance_seed=int(rng.integers(2 ** 63))))
        taken.append((pos[0], pos[1], side))

    distractors: List[Distractor] = []
    for _ in range(int(rng.integers(0, cfg.max_distractors + 1))):
        size = float(2.0 ** rng.uniform(3.0, 6.0))
        pos = _place_box(rng, cfg, size, taken, max_iou=0.0, tries=40)
        if pos is None:
            continue
        kind = "disc" if rng.uniform() < 0.5 else "rect"
        distractors.append(Distractor(kind, pos[0], pos[1], size))
        taken.append((pos[0], pos[1], size))

    ignore: List[Tuple[float, float, float, float]] = []
    if rng.uniform() < cfg.ignore_prob:
        iw = float(rng.uniform(12, 48))
        ih = float(rng.uniform(12, 48))
        pos = _place_box(rng, cfg, max(iw, ih), taken, max_iou=0.0, tries=40)
        if pos is not None:
            ignore.append((pos[0] - iw / 2.0, pos[1] - ih / 2.0, iw, ih))

    return SceneSpec(
        width=cfg.image_width,
        height=cfg.image_height,
        glyphs=tuple(glyphs),
        ignore_rects=tuple(ignore),
        distractors=tuple(distractors),
        noise_amp=cfg.noise_amp,
        noise_cell=cfg.noise_cell,
        seed=int(rng.integers(2 ** 63)),
    )


def sample_dataset(cfg: DatasetConfig, seed: int) -> Tuple[List[Scene], List[Scene]]:
    """Deterministic corpus: first train_count scenes train, the rest test."""
    total = cfg.train_count + cfg.test_count
    seqs = np.random.SeedSequence(seed).spawn(total)
    scenes = [sample_scene_spec(cfg, np.random.default_rng(sq)) for sq in seqs]
    rendered = [render_scene(s) for s in scenes]
    return rendered[:cfg.train_count], rendered[cfg.train_count:]


def save_dataset(scenes: Sequence[Scene], out_dir, manifest_name: str,
                 prefix: str = "img") -> Path:
    """Write PGM files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i, scene in enumerate(scenes):
        rel = f"images/{prefix}_{i:05d}.pgm"
        write_pgm(out_dir / rel, scene.image)
        records.append(
            ImageAnnotation(
                image_path=rel,
                landmark_sets=scene.annotation.landmark_sets,
                ignore_rects=scene.annotation.ignore_rects,
            )
        )
    manifest = out_dir / manifest_name
    write_annotations(manifest, records)
    return manifest


@dataclass
class LoadedScene:
    """Scene reconstructed from disk; image paths resolve against the manifest."""

    image: np.ndarray
    annotation: ImageAnnotation


def load_dataset(manifest_path) -> List[LoadedScene]:
    base = Path(manifest_path).parent
    return [
        LoadedScene(image=read_image(base / ann.image_path), annotation=ann)
        for ann in read_annotations(manifest_path)
    ]
