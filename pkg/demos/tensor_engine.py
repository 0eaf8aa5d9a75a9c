"""Tour of the reverse-mode tensor engine the trainer runs on.

Every operation records its inputs on a tape; backward() walks the tape once
in reverse topological order and accumulates gradients into the leaves. The
engine is plain numpy underneath, so anything it computes can be checked
against a finite difference.
"""

import numpy as np

from ksm.engine import (
    Optimizer,
    Tensor,
    backward,
    conv2d,
    dense,
    no_grad,
    relu,
    softmax_cross_entropy,
    use_dtype,
)

rng = np.random.default_rng(0)

# -- 1. a scalar chain, checked by hand ----------------------------------
x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
y = (x * x).sum()  # d/dx of sum(x^2) is 2x
backward(y)
print("value", float(y.data), "grad", x.grad, "(expect [4, -2])")

# -- 2. the same rule holds through broadcasting and a matmul ------------
with use_dtype(np.float64):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    wgt = Tensor(rng.normal(size=(3, 2)))
    backward(((a @ b) * wgt).sum())

    # central finite difference on one entry of a
    eps = 1e-6
    probe = a.data.copy()
    probe[1, 2] += eps
    up = ((probe @ b.data) * wgt.data).sum()
    probe[1, 2] -= 2 * eps
    dn = ((probe @ b.data) * wgt.data).sum()
print(f"analytic {a.grad[1, 2]:+.9f} finite difference {(up - dn) / (2 * eps):+.9f}")

# -- 3. gradients drive an optimizer -------------------------------------
# fit a 1-hidden-layer net to XOR; four points, so it must bend the plane
inputs = Tensor(np.array([[0.0, 0], [0, 1], [1, 0], [1, 1]]))
labels = np.array([0, 1, 1, 0])
w1 = Tensor(rng.normal(0, 1.0, (16, 2)), requires_grad=True)  # weight is (out, in)
b1 = Tensor(np.zeros(16), requires_grad=True)
w2 = Tensor(np.zeros((2, 16)), requires_grad=True)
b2 = Tensor(np.zeros(2), requires_grad=True)
opt = Optimizer([w1, b1, w2, b2], kind="adam", lr=0.05)

for step in range(301):
    hidden = relu(dense(inputs, w1, b1))
    loss = softmax_cross_entropy(dense(hidden, w2, b2), labels)
    backward(loss)
    opt.step()
    if step % 100 == 0:
        with no_grad():
            logits = dense(relu(dense(inputs, w1, b1)), w2, b2)
            acc = float((np.argmax(logits.data, 1) == labels).mean())
        print(f"step {step:3d} loss {float(loss.data):.4f} accuracy {acc:.2f}")

# -- 4. convolution is just another taped op ------------------------------
img = Tensor(rng.normal(size=(1, 1, 6, 6)), requires_grad=True)
kern = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
out = conv2d(img, kern, stride=1, pad=1)
print("conv output shape", out.data.shape, "(expect (1, 2, 6, 6))")
backward((out * out).sum())
print("kernel grad shape ", kern.grad.shape, "image grad shape", img.grad.shape)
