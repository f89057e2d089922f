"""Point annotations and their conversion to density maps.

Each annotated point contributes one Gaussian kernel evaluated at pixel
centers over a window of radius ceil(3 * sigma), clipped to the image and
renormalized to unit mass afterwards, so the map always sums to the point
count regardless of truncation or border loss.  Sigma is either fixed or
geometry-adaptive: beta times the mean distance to the k nearest other
points, which shrinks kernels in dense regions.

File formats:
  annotation   JSON {"width": W, "height": H, "points": [[x, y], ...]}
  density map  binary, magic "DMAP", u32 height, u32 width (little-endian),
               then h*w float32 little-endian values, row-major
  PGM export   P5 8-bit, max-normalized, for eyeballing maps
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .pgm import write_pgm

__all__ = [
    "Annotation",
    "density_fixed",
    "density_adaptive",
    "knn_mean_distance",
    "save_density",
    "load_density",
    "density_to_pgm",
    "ADAPTIVE_SIGMA_CLAMP",
    "DEFAULT_FALLBACK_SIGMA",
]

ADAPTIVE_SIGMA_CLAMP = (0.5, 50.0)
DEFAULT_FALLBACK_SIGMA = 15.0
DMAP_MAGIC = b"DMAP"


@dataclass(frozen=True, eq=False)
class Annotation:
    """Head-point coordinates for one image, in pixel units."""

    width: int
    height: int
    points: np.ndarray  # (count, 2) float64, columns (x, y)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"empty image dims {self.width}x{self.height}")
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size:
            if pts[:, 0].min() < 0 or pts[:, 0].max() >= self.width:
                raise ValueError("point x coordinates out of [0, width)")
            if pts[:, 1].min() < 0 or pts[:, 1].max() >= self.height:
                raise ValueError("point y coordinates out of [0, height)")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {"width": self.width, "height": self.height, "points": self.points.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "Annotation":
        data = json.loads(text)
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            points=np.asarray(data["points"], dtype=np.float64).reshape(-1, 2),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Annotation":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _add_kernel(grid: np.ndarray, x: float, y: float, sigma: float) -> None:
    """Accumulate one unit-mass truncated Gaussian centered at (x, y)."""
    h, w = grid.shape
    radius = int(np.ceil(3.0 * sigma))
    cx = int(round(x))
    cy = int(round(y))
    c0 = max(0, cx - radius)
    c1 = min(w, cx + radius + 1)
    r0 = max(0, cy - radius)
    r1 = min(h, cy + radius + 1)
    cols = np.exp(-((np.arange(c0, c1) - x) ** 2) / (2.0 * sigma * sigma))
    rows = np.exp(-((np.arange(r0, r1) - y) ** 2) / (2.0 * sigma * sigma))
    window = np.outer(rows, cols)
    grid[r0:r1, c0:c1] += window / window.sum()


def density_fixed(ann: Annotation, sigma: float) -> np.ndarray:
    """Density map with one fixed-width Gaussian per point; sums to count."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    grid = np.zeros((ann.height, ann.width), dtype=np.float64)
    for x, y in ann.points:
        _add_kernel(grid, x, y, sigma)
    return grid


def knn_mean_distance(points: np.ndarray, k: int) -> np.ndarray:
    """Per-point mean Euclidean distance to its k nearest other points.

    Brute force; fine at desk scale.  Needs more than k points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    deltas = pts[:, None, :] - pts[None, :, :]
    dists = np.sqrt((deltas ** 2).sum(axis=-1))
    np.fill_diagonal(dists, np.inf)
    nearest = np.sort(dists, axis=1)[:, :k]
    return nearest.mean(axis=1)


def density_adaptive(
    ann: Annotation,
    beta: float = 0.3,
    k: int = 3,
    fallback_sigma: float = DEFAULT_FALLBACK_SIGMA,
    sigma_clamp: tuple[float, float] = ADAPTIVE_SIGMA_CLAMP,
) -> np.ndarray:
    """Density map with per-point sigma = beta * mean k-NN distance.

    Sigmas are clamped to ``sigma_clamp`` so duplicate points cannot collapse
    a kernel; with k or fewer points every point falls back to
    ``fallback_sigma``.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    grid = np.zeros((ann.height, ann.width), dtype=np.float64)
    if ann.count == 0:
        return grid
    if ann.count <= k:
        sigmas = np.full(ann.count, float(fallback_sigma))
    else:
        sigmas = np.clip(beta * knn_mean_distance(ann.points, k), *sigma_clamp)
    for (x, y), sigma in zip(ann.points, sigmas):
        _add_kernel(grid, x, y, float(sigma))
    return grid


def save_density(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"density maps are 2-D, got shape {grid.shape}")
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(DMAP_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def load_density(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DMAP_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    h, w = struct.unpack_from("<II", data, 4)
    values = np.frombuffer(data, dtype="<f4", count=h * w, offset=12)
    return values.astype(np.float64).reshape(h, w)


def density_to_pgm(path, grid: np.ndarray) -> None:
    """Max-normalized 8-bit view of a map, for visual inspection."""
    grid = np.asarray(grid, dtype=np.float64)
    peak = grid.max()
    scaled = grid / peak if peak > 0 else grid
    write_pgm(path, np.round(scaled * 255.0).astype(np.uint8))
