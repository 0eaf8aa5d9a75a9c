"""Independent reference implementations the tests compare against.

Everything here is deliberately naive: nested loops and textbook
formulas, kept free of the library's own vectorized kernels.
"""

import numpy as np


def conv2d_loops(x, w, stride=1, pad=0):
    """Cross-correlation via six nested loops."""
    b, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, cout, ho, wo), dtype=x.dtype)
    for n in range(b):
        for oc in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ic, i * stride + u, j * stride + v] * w[oc, ic, u, v]
                    out[n, oc, i, j] = acc
    return out


def max_pool2d_loops(x, k):
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    out = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[n, ch, i, j] = x[n, ch, i * k : (i + 1) * k, j * k : (j + 1) * k].max()
    return out


def finite_difference(f, x, h=1e-6):
    """Central differences of a scalar function, one probe per element."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        hi = f(probe.reshape(x.shape))
        probe[i] = flat[i] - h
        lo = f(probe.reshape(x.shape))
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def max_rel_err(a, b, floor_frac=1e-6):
    """Scale-floored relative error, elementwise max.

    Entries far below the gradient's overall magnitude are compared
    absolutely at ``floor_frac`` of that magnitude, since central
    differences cannot resolve them above roundoff.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max())
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.abs(a) + np.abs(b), floor_frac * scale)
    return float((np.abs(a - b) / denom).max())


def adam_reference(grad_fn, p0, lr, steps, betas=(0.9, 0.999), eps=1e-8):
    """Textbook scalar Adam with bias correction."""
    p = float(p0)
    m = v = 0.0
    b1, b2 = betas
    trajectory = [p]
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
        trajectory.append(p)
    return p, trajectory


def softmax_xent_reference(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    return float(-np.log(p[rows, labels]).mean())


def batchnorm_train_reference(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None]


def mask_file_reference_size(layer_dims):
    """(d0, d1, zeros) per layer -> expected byte count of a mask-only file."""
    total = 4 + 2 + 24 + 4
    for d0, d1, zeros in layer_dims:
        total += 12 + (d0 * d1 + 7) // 8 + 4 * zeros
    return total
