"""Single-column density-map crowd counting at desk scale.

The pieces: a small float64 autodiff core over 4-D tensors, dilated and
grouped convolution ops, a scale-pyramid block whose groups are blended by a
stochastic convex mixer, a dense-connected regression network, Gaussian
density-map ground truth, synthetic scene data, a patch-based training loop
with the integrated loss, and counting metrics with resolution and transfer
sweeps.
"""

from .autodiff import Tape, Tensor, grad_check
from .blocks import (
    MixerDraw,
    ScaleBlockConfig,
    draw_alphas,
    mix_scales,
    mixer_expansion_coeffs,
    scale_block_forward,
)
from .evaluation import (
    DEFAULT_AREA_RATIOS,
    EvalReport,
    cross_eval,
    evaluate,
    predict_count,
    scale_sweep,
)
from .groundtruth import Annotation, density_adaptive, density_fixed, knn_mean_distance
from .network import (
    Model,
    NetworkConfig,
    build_network,
    forward,
    load_checkpoint,
    load_params_into,
    param_count,
    save_checkpoint,
)
from .ops import ConvSpec, bilinear_resize, concat_channels, conv2d, convex_mix, sum_pool
from .synth import Corpus, SceneParams, generate_corpus, load_corpus, sample_patch_batch, save_corpus, synth_scene
from .training import TrainConfig, adam_step, loss_averaged, loss_integrated, train

__version__ = "0.1.0"
