# Pin BLAS to one thread before numpy loads anywhere in the test session,
# so the runtime budgets below are honest single-core numbers.
import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from scalecount.synth import SceneParams, generate_corpus  # noqa: E402


@pytest.fixture(scope="session")
def toy_corpus():
    """The 200-scene 96x96 corpus used by the training-level checks."""
    params = SceneParams(width=96, height=96, count_range=(4, 30), profile="uniform", noise_level=0.02)
    return generate_corpus(200, params, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
