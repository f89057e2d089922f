"""Named, reproducible random streams derived from one master seed.

Every source of randomness in a run (scene synthesis, patch sampling,
weight init, mixer draws) pulls from its own stream, so changing one
configuration knob never perturbs the other streams.
"""

from __future__ import annotations

import numpy as np

__all__ = ["STREAMS", "stream"]

# Stable ids; appending new names is fine, reordering is not.
STREAMS = {"scene": 0, "sampling": 1, "init": 2, "mixer": 3}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for the named sub-stream of ``seed``.

    ``extra`` keys derive per-item streams, e.g. one per synthesized scene.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; known: {sorted(STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name], *map(int, extra)]))
