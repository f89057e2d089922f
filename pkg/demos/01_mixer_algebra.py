# The stochastic scale mixer, worked through by hand.
#
# The mixer blends a list of per-scale feature maps d[0..G-1] recursively:
#     m[0] = d[0]
#     m[1] = d[1]
#     m[i] = a[i-1] * m[i-1] + (1 - a[i-1]) * d[i]
# with each a drawn fresh from U(0, 1) per training iteration.  Expanding the
# recursion shows every mixed map is a convex combination of the raw scales,
# which is why the expansion matrix below always has non-negative rows that
# sum to one.

import numpy as np

from scalecount.blocks import MixerDraw, mixer_expansion_coeffs, mix_scales
from scalecount.autodiff import Tensor

rng = np.random.default_rng(0)

# A random draw for G = 6 groups needs 4 coefficients.
alphas = rng.uniform(size=4)
print("alphas:", np.round(alphas, 4))

coeffs = mixer_expansion_coeffs(MixerDraw(alphas), 6)
print("\nexpansion matrix (row i: weights of m[i] over d[0..5]):")
print(np.round(coeffs, 4))
print("row sums:", coeffs.sum(axis=1))

# The last row as a closed form: products of alphas telescoping down.
a1, a2, a3, a4 = alphas
closed = [0.0, a1*a2*a3*a4, (1-a1)*a2*a3*a4, (1-a2)*a3*a4, (1-a3)*a4, 1-a4]
print("\nclosed-form last row:", np.round(closed, 4))
print("matches recursion:   ", np.allclose(coeffs[5], closed, atol=1e-15))

# At test time all alphas sit at their expectation 0.5 and the last mixed map
# becomes a fixed blend: 1/16, 1/16, 1/8, 1/4, 1/2 over d[1..5].
mid = mixer_expansion_coeffs(MixerDraw(np.full(4, 0.5)), 6)
print("\nalpha = 0.5 last row:", mid[5])

# The same algebra drives actual tensors.
d = [Tensor(rng.normal(size=(1, 2, 3, 3))) for _ in range(6)]
mixed = mix_scales(d, MixerDraw(alphas))
reference = sum(coeffs[5, j] * d[j].values for j in range(6))
print("\ntensor mix matches matrix:", np.allclose(mixed[5].values, reference))

# Monte-Carlo check of the test-time rule: averaging stochastic mixes over
# many draws approaches the alpha = 0.5 mix.
target = sum(mid[5, j] * d[j].values for j in range(6))
acc = np.zeros_like(target)
draws = 20_000
for _ in range(draws):
    c = mixer_expansion_coeffs(MixerDraw(rng.uniform(size=4)), 6)
    acc += sum(c[5, j] * d[j].values for j in range(6))
print(f"MC mean vs 0.5-mix, max dev over {draws} draws:",
      float(np.abs(acc / draws - target).max()))
