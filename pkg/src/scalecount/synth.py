"""Procedural toy crowd scenes, corpus management, and patch sampling.

Scenes are grayscale: each head is a soft filled disc whose radius grows
linearly from the top of the image to the bottom (a crude perspective
gradient), plus additive noise.  The exact head centers become the
annotation.  A corpus is a list of (image, annotation, split) records backed
on disk by PGM images, JSON annotations, and a JSON manifest of
{"image": ..., "annotation": ..., "split": "train"|"val"|"test"} entries.

Training patches are cropped online: each patch picks a source image
uniformly with replacement, then a uniform valid corner.  Ground-truth
patches are cut from the full-image density map, so Gaussian mass that
leaks across a patch border stays lost, exactly like counts behave in real
crowd crops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .groundtruth import Annotation, density_adaptive, density_fixed
from .pgm import read_pgm, write_pgm
from .rng import stream

__all__ = [
    "SceneParams",
    "synth_scene",
    "CorpusItem",
    "Corpus",
    "generate_corpus",
    "save_corpus",
    "load_corpus",
    "PatchBatch",
    "sample_patch_batch",
]

PROFILES = ("uniform", "top-heavy", "clustered")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneParams:
    width: int = 96
    height: int = 96
    count_range: tuple[int, int] = (4, 30)
    radius_range: tuple[float, float] = (2.0, 5.0)  # head radius at top row, bottom row
    profile: str = "uniform"
    noise_level: float = 0.02

    def __post_init__(self) -> None:
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"count_range must satisfy 0 <= min <= max, got {self.count_range}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if max(self.radius_range) * 2 >= min(self.width, self.height):
            raise ValueError(
                f"head radius {max(self.radius_range)} too large for {self.width}x{self.height}"
            )


def _sample_positions(params: SceneParams, count: int, rng: np.random.Generator) -> np.ndarray:
    w, h = params.width, params.height
    if count == 0:
        return np.zeros((0, 2))
    if params.profile == "uniform":
        x = rng.uniform(0.0, w, size=count)
        y = rng.uniform(0.0, h, size=count)
    elif params.profile == "top-heavy":
        x = rng.uniform(0.0, w, size=count)
        y = h * rng.uniform(0.0, 1.0, size=count) ** 2
    else:  # clustered
        n_clusters = max(1, count // 8)
        centers = rng.uniform((0.15 * w, 0.15 * h), (0.85 * w, 0.85 * h), size=(n_clusters, 2))
        which = rng.integers(0, n_clusters, size=count)
        spread = min(w, h) / 10.0
        offsets = rng.normal(0.0, spread, size=(count, 2))
        x = centers[which, 0] + offsets[:, 0]
        y = centers[which, 1] + offsets[:, 1]
    eps = 1e-6
    return np.column_stack(
        [np.clip(x, 0.0, w - eps), np.clip(y, 0.0, h - eps)]
    )


def synth_scene(params: SceneParams, rng: np.random.Generator) -> tuple[np.ndarray, Annotation]:
    """One grayscale scene in [0, 1] plus the exact head annotation.

    The image is quantized to 8 bits so in-memory corpora match what a
    PGM round trip through disk produces.
    """
    lo, hi = params.count_range
    count = int(rng.integers(lo, hi + 1))
    points = _sample_positions(params, count, rng)

    h, w = params.height, params.width
    canvas = np.zeros((h, w), dtype=np.float64)
    r_top, r_bottom = params.radius_range
    for x, y in points:
        radius = r_top + (r_bottom - r_top) * (y / max(h - 1, 1))
        rr = int(np.ceil(radius))
        c0, c1 = max(0, int(x) - rr), min(w, int(x) + rr + 1)
        r0, r1 = max(0, int(y) - rr), min(h, int(y) + rr + 1)
        yy, xx = np.mgrid[r0:r1, c0:c1]
        dist2 = (xx - x) ** 2 + (yy - y) ** 2
        blob = 0.85 * np.clip(1.0 - dist2 / (radius * radius), 0.0, 1.0)
        np.maximum(canvas[r0:r1, c0:c1], blob, out=canvas[r0:r1, c0:c1])
    if params.noise_level > 0:
        canvas = canvas + rng.normal(0.0, params.noise_level, size=canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)
    canvas = np.round(canvas * 255.0) / 255.0
    return canvas, Annotation(width=w, height=h, points=points)


@dataclass
class CorpusItem:
    image_id: str
    image: np.ndarray  # (h, w) float64 in [0, 1]
    annotation: Annotation | None
    split: str
    density: np.ndarray | None = None


@dataclass
class Corpus:
    items: list[CorpusItem] = field(default_factory=list)

    def split(self, name: str) -> list[CorpusItem]:
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {name!r}")
        return [item for item in self.items if item.split == name]

    def ensure_density(
        self, mode: str = "fixed", sigma: float = 15.0, beta: float = 0.3, k: int = 3
    ) -> None:
        """Generate density maps for items that do not have one yet."""
        if mode not in ("fixed", "adaptive"):
            raise ValueError(f"gt mode must be 'fixed' or 'adaptive', got {mode!r}")
        for item in self.items:
            if item.density is not None or item.annotation is None:
                continue
            if mode == "fixed":
                item.density = density_fixed(item.annotation, sigma)
            else:
                item.density = density_adaptive(item.annotation, beta=beta, k=k)


def generate_corpus(
    n_scenes: int,
    params: SceneParams,
    seed: int,
    split_fracs: tuple[float, float] = (0.8, 0.1),
) -> Corpus:
    """Synthesize ``n_scenes`` scenes with per-scene rng streams.

    The first ``train`` fraction of indices becomes the train split, the
    next the val split, the rest test, so splits are stable under seed.
    """
    train_frac, val_frac = split_fracs
    if train_frac + val_frac > 1.0:
        raise ValueError("train and val fractions exceed 1")
    n_train = int(round(n_scenes * train_frac))
    n_val = int(round(n_scenes * val_frac))
    items = []
    for index in range(n_scenes):
        rng = stream(seed, "scene", index)
        image, ann = synth_scene(params, rng)
        split = "train" if index < n_train else ("val" if index < n_train + n_val else "test")
        items.append(
            CorpusItem(image_id=f"scene_{index:04d}", image=image, annotation=ann, split=split)
        )
    return Corpus(items=items)


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write PGM images, JSON annotations, and the manifest; returns its path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    manifest = []
    for item in corpus.items:
        image_rel = f"images/{item.image_id}.pgm"
        ann_rel = f"annotations/{item.image_id}.json"
        write_pgm(out / image_rel, np.round(item.image * 255.0).astype(np.uint8))
        if item.annotation is not None:
            item.annotation.save(out / ann_rel)
        manifest.append({"image": image_rel, "annotation": ann_rel, "split": item.split})
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest_path


def load_corpus(manifest_path) -> Corpus:
    """Load a manifest-backed corpus.

    Images whose annotation file is missing are kept with ``annotation=None``
    so evaluation can skip them with a recorded warning.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    items = []
    for entry in manifest:
        image_path = root / entry["image"]
        ann_path = root / entry["annotation"]
        image = read_pgm(image_path).astype(np.float64) / 255.0
        annotation = Annotation.load(ann_path) if ann_path.exists() else None
        items.append(
            CorpusItem(
                image_id=Path(entry["image"]).stem,
                image=image,
                annotation=annotation,
                split=entry["split"],
            )
        )
    return Corpus(items=items)


@dataclass
class PatchBatch:
    images: np.ndarray  # (n, 1, p, p) float64
    gts: np.ndarray  # (n, 1, p, p) float64, cut from full-image density maps
    sources: list[int]  # corpus item index per patch
    offsets: list[tuple[int, int]]  # (top, left) per patch
    flipped: list[bool]


def sample_patch_batch(
    items: list[CorpusItem],
    n: int,
    patch: int,
    rng: np.random.Generator,
    flip: bool = True,
) -> PatchBatch:
    """Crop ``n`` random patches (with replacement across images).

    Images smaller than the patch are excluded; with ``flip`` on, each patch
    and its ground truth are mirrored together with probability one half.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 patches, got {n}")
    eligible = [
        (idx, item)
        for idx, item in enumerate(items)
        if item.image.shape[0] >= patch and item.image.shape[1] >= patch
    ]
    if not eligible:
        raise ValueError(f"no corpus image is at least {patch}x{patch}")
    for _, item in eligible:
        if item.density is None:
            raise ValueError(f"item {item.image_id} has no density map; call ensure_density first")

    images = np.empty((n, 1, patch, patch), dtype=np.float64)
    gts = np.empty((n, 1, patch, patch), dtype=np.float64)
    sources: list[int] = []
    offsets: list[tuple[int, int]] = []
    flipped: list[bool] = []
    for i in range(n):
        pick = int(rng.integers(0, len(eligible)))
        idx, item = eligible[pick]
        h, w = item.image.shape
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        do_flip = bool(flip and rng.random() < 0.5)
        img = item.image[top : top + patch, left : left + patch]
        gt = item.density[top : top + patch, left : left + patch]
        if do_flip:
            img = img[:, ::-1]
            gt = gt[:, ::-1]
        images[i, 0] = img
        gts[i, 0] = gt
        sources.append(idx)
        offsets.append((top, left))
        flipped.append(do_flip)
    return PatchBatch(images=images, gts=gts, sources=sources, offsets=offsets, flipped=flipped)
