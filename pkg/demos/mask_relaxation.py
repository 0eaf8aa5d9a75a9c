"""Walk through the kernel mask relaxation, from raw scores to a stored mask.

A mask layer starts as a real-valued score per kernel. A steep sigmoid turns
scores into keep probabilities, a temperature sharpens or softens those
probabilities, and hardening snaps them to bits while gradients keep flowing
through the soft path. Dropped kernels get a scaling value instead of a hard
zero, so a task can still use a faint copy of a kernel it mostly rejects.
"""

import numpy as np

from ksm.engine import Tensor, backward, use_dtype
from ksm.masks import (
    MaskHyperparams,
    compose_soft_mask,
    harden,
    keep_probability,
    relax_sigmoid,
    scaling_tensor,
)

rng = np.random.default_rng(0)
hyper = MaskHyperparams()  # k=20, tau=0, T=0.5

# -- 1. scores to keep probabilities ------------------------------------
scores = np.array([-0.30, -0.05, 0.0, 0.05, 0.30])
print("raw kernel scores:   ", scores)

m = Tensor(scores.copy(), requires_grad=True)
sigma = relax_sigmoid(m, hyper)
print("sigmoid(k(m - tau)): ", np.round(sigma.data, 4))

# the temperature reshapes the probabilities without moving the 0.5 point
for t in (2.0, 1.0, 0.5, 0.1):
    q = keep_probability(relax_sigmoid(Tensor(scores.copy()), hyper), t)
    print(f"keep prob at T={t:<4}", np.round(q.data, 4))
# T=1 returns the sigmoid unchanged; small T approaches the hard threshold

# -- 2. hardening keeps the gradient alive ------------------------------
with use_dtype(np.float64):
    m = Tensor(scores.copy(), requires_grad=True)
    q = keep_probability(relax_sigmoid(m, hyper), hyper.temperature)
    bits = harden(q)  # forward is exactly 0/1, backward passes through
    backward((bits * Tensor(np.arange(5.0))).sum())
print("hard bits:           ", bits.data)
print("grad through bits:   ", np.round(m.grad, 3))
# the bit for score -0.30 is 0 yet its gradient is nonzero: the straight-
# through estimator lets training pull a dropped kernel back in

# -- 3. the closed-form backward of the temperature stage ---------------
s0, t = 0.62, 0.5
with use_dtype(np.float64):
    s = Tensor(np.array([s0]), requires_grad=True)
    backward(keep_probability(s, t).sum())
q0 = s0 ** (1 / t) / (s0 ** (1 / t) + (1 - s0) ** (1 / t))
closed = q0 * (1 - q0) / (t * s0 * (1 - s0))
print(f"dq/dsigma tape {float(s.grad[0]):.12f} closed form {closed:.12f}")

# -- 4. dropped kernels carry a scaling value ----------------------------
m = Tensor(scores.copy())
bits = harden(keep_probability(relax_sigmoid(m, hyper), hyper.temperature))
scales = scaling_tensor(m, bits)  # min-max of the scores, dropped slots only
mask = compose_soft_mask(bits, scales)
print("bits:                ", bits.data)
print("scales:              ", np.round(scales.data, 4))
print("superposed mask:     ", np.round(mask.data, 4))
# kept kernels pass at weight 1.0, dropped ones at their normalized score
