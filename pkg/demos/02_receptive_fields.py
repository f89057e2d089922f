# Receptive fields of the dilated scale pyramid.
#
# Group i of a block goes through a 3x3 convolution with dilation rate i, so
# one layer sees a (2i + 1) x (2i + 1) window: 3x3, 5x5, 7x7, 9x9, 11x11 for
# rates 1..5.  Feeding a unit impulse through an all-ones kernel draws the
# tap pattern directly.

import numpy as np

from scalecount.autodiff import Tensor
from scalecount.ops import ConvSpec, conv2d

for rate in range(1, 6):
    spec = ConvSpec(1, 1, kernel_size=3, dilation=rate)
    weight = Tensor(np.ones(spec.weight_shape))
    bias = Tensor(np.zeros(spec.bias_shape))
    impulse = np.zeros((1, 1, 13, 13))
    impulse[0, 0, 6, 6] = 1.0
    out = conv2d(Tensor(impulse), weight, bias, spec).values[0, 0]

    nz = np.argwhere(out != 0)
    extent = nz[:, 0].max() - nz[:, 0].min() + 1
    print(f"rate {rate}: support {extent}x{extent}, {len(nz)} taps")
    for r in range(13):
        print("   " + "".join("#" if out[r, c] else "." for c in range(13)))
    print()
