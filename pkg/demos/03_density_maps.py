# Ground-truth density maps from head points.
#
# Every annotated point becomes a unit-mass Gaussian, so the map integrates
# to the head count.  Fixed sigma blurs everything equally; the
# geometry-adaptive variant shrinks kernels where heads pack together
# (sigma = 0.3 * mean distance to the 3 nearest neighbours).

import numpy as np

from scalecount.groundtruth import (
    Annotation,
    density_adaptive,
    density_fixed,
    density_to_pgm,
    knn_mean_distance,
    save_density,
)
from scalecount.synth import SceneParams, synth_scene
from scalecount.rng import stream

image, ann = synth_scene(
    SceneParams(width=96, height=96, count_range=(30, 30), profile="clustered"),
    stream(42, "scene", 0),
)
print(f"scene with {ann.count} heads")

fixed = density_fixed(ann, sigma=4.0)
adaptive = density_adaptive(ann, beta=0.3, k=3)
print(f"fixed-sigma map sum    {fixed.sum():.6f}")
print(f"adaptive map sum       {adaptive.sum():.6f}")

sigmas = 0.3 * knn_mean_distance(ann.points, 3)
print(f"adaptive sigmas: min {sigmas.min():.2f}, median {np.median(sigmas):.2f}, "
      f"max {sigmas.max():.2f}")

# Adaptive kernels are peakier in clusters: compare peak densities.
print(f"peak density fixed {fixed.max():.4f} vs adaptive {adaptive.max():.4f}")

# Files: a compact binary map plus an 8-bit PGM preview for eyeballing.
save_density("demo_density.dmap", adaptive)
density_to_pgm("demo_density.pgm", adaptive)
print("wrote demo_density.dmap / demo_density.pgm")
