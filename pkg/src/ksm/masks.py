"""Soft-mask mathematics.

A real-valued mask is pushed through a steep logistic, turned into a
keep-probability by a temperature-controlled two-way softmax, hardened
to bits with a straight-through gradient, and finally superposed with a
scaling tensor that re-weights the dropped kernels instead of zeroing
them:

    sigma = logistic(k * (m - tau))
    q     = sigma^(1/T) / (sigma^(1/T) + (1 - sigma)^(1/T))
    b     = [q >= 0.5]                  (gradient passes straight through)
    a     = (1 - b) * minmax(m)         (detached from the tape)
    mask  = b + a

As T -> 0 the keep-probability collapses onto the hard threshold
[m >= tau]; at T = 1 it is sigma itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .engine import ShapeError, Tensor, backward, lift, make_op, use_dtype

SIGMA_EPS = 1e-7


class MaskSupportError(ValueError):
    """Binary and scaling parts of a soft mask overlap."""


@dataclass(frozen=True)
class MaskHyperparams:
    """Knobs of the mask relaxation, stored with every mask artifact.

    k is the logistic steepness, tau the threshold, temperature the
    softmax temperature, init_value the starting value of every real
    mask entry, and gumbel toggles logistic noise on the relaxation.
    """

    k: float = 20.0
    tau: float = 0.0
    temperature: float = 0.5
    init_value: float = 0.01
    gumbel: bool = False

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class RelaxedMask:
    """Intermediate quantities of the relaxation, for inspection."""

    sigma: np.ndarray
    pi0: np.ndarray
    pi1: np.ndarray
    q: np.ndarray


def relax_sigmoid(mask: Tensor, hyper: MaskHyperparams) -> Tensor:
    """Logistic relaxation of the hard threshold at tau with steepness k."""
    k, tau = hyper.k, hyper.tau
    sig = expit(k * (mask.data - tau))

    def rule(g):
        return (g * (k * sig * (1.0 - sig)),)

    return make_op("relax_sigmoid", (mask,), sig, rule)


def keep_probability(
    sigma: Tensor, temperature: float, logistic_noise: np.ndarray | None = None
) -> Tensor:
    """Temperature-relaxed probability of keeping a kernel.

    Computed through log-odds, ``q = logistic(logit(sigma) / T)``, which
    equals the two-way softmax over {drop, keep} yet stays finite for
    extreme temperatures. sigma is clamped away from {0, 1} first. The
    backward rule is the closed form q(1-q) / (T sigma (1-sigma)).

    Optional pre-sampled logistic noise is added to the log-odds, turning
    the deterministic relaxation into a concrete random sample.
    """
    temperature = float(temperature)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.clip(sigma.data, SIGMA_EPS, 1.0 - SIGMA_EPS)
    if logistic_noise is None and temperature == 1.0:
        q = s
    else:
        z = np.log(s) - np.log1p(-s)
        if logistic_noise is not None:
            z = z + logistic_noise
        q = expit(z / temperature)

    def rule(g):
        return (g * (q * (1.0 - q) / (temperature * s * (1.0 - s))),)

    return make_op("keep_probability", (sigma,), q, rule)


def harden(q: Tensor) -> Tensor:
    """Threshold at 0.5 (ties keep) with a straight-through gradient."""
    bits = (q.data >= 0.5).astype(q.data.dtype)

    def rule(g):
        return (g,)

    return make_op("harden", (q,), bits, rule)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Map an array onto [0, 1]; a constant array maps to 0.5 everywhere."""
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def scaling_tensor(mask, bits) -> Tensor:
    """Normalized detached mask values on the dropped kernels only.

    Entries with bit 1 are exactly zero; entries with bit 0 carry the
    min-max normalized real mask value. The result is a constant: no
    gradient flows through it.
    """
    mask_data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    bit_data = bits.data if isinstance(bits, Tensor) else np.asarray(bits)
    if mask_data.shape != bit_data.shape:
        raise ShapeError(
            f"mask shape {mask_data.shape} != bits shape {bit_data.shape}"
        )
    return lift((1.0 - bit_data) * minmax_normalize(mask_data))


def compose_soft_mask(bits: Tensor, scales: Tensor) -> Tensor:
    """Superpose kept bits and drop scales into the final mask."""
    if bits.data.shape != scales.data.shape:
        raise ShapeError(
            f"bits shape {bits.data.shape} != scales shape {scales.data.shape}"
        )
    if np.any((bits.data != 0) & (scales.data != 0)):
        raise MaskSupportError("scaling values may only sit on dropped entries")
    return bits + scales


def relaxation_parts(
    mask_values: np.ndarray, hyper: MaskHyperparams, temperature: float | None = None
) -> RelaxedMask:
    """Compute sigma, the two class probabilities, and q without the tape."""
    t = hyper.temperature if temperature is None else float(temperature)
    sig = expit(hyper.k * (np.asarray(mask_values, dtype=np.float64) - hyper.tau))
    s = np.clip(sig, SIGMA_EPS, 1.0 - SIGMA_EPS)
    q = s if t == 1.0 else expit((np.log(s) - np.log1p(-s)) / t)
    return RelaxedMask(sigma=sig, pi0=1.0 - sig, pi1=sig, q=q)


def mask_chain_gradient_check(
    hyper: MaskHyperparams,
    shape: tuple[int, ...] = (4, 3),
    seed: int = 0,
    spread: float | None = None,
) -> float:
    """Max relative error of tape gradients vs central finite differences.

    Differentiates a random linear functional of the keep-probability
    chain (relaxation then softmax, no hardening) with respect to the
    real mask, in 64-bit. Mask values are sampled within ``spread`` of
    tau, by default min(7, 12 T)/k: past that band the chain saturates
    and central differences on an O(1) objective cannot resolve the
    vanishing gradient above roundoff. Entries more than six orders of
    magnitude below the gradient's overall scale are compared absolutely
    at that floor for the same reason.
    """
    if spread is None:
        spread = min(7.0, 12.0 * hyper.temperature) / hyper.k
    rng = np.random.default_rng(seed)
    m0 = rng.uniform(hyper.tau - spread, hyper.tau + spread, shape)
    weights = rng.normal(size=shape)

    with use_dtype(np.float64):
        m = Tensor(m0, requires_grad=True)
        loss = (keep_probability(relax_sigmoid(m, hyper), hyper.temperature) * lift(weights)).sum()
        backward(loss)
        analytic = m.grad

    def forward(values: np.ndarray) -> float:
        parts = relaxation_parts(values, hyper)
        return float((parts.q * weights).sum())

    fd = np.zeros_like(m0)
    h = 1e-6
    flat = m0.ravel()
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        hi = forward(probe.reshape(shape))
        probe[i] = flat[i] - h
        lo = forward(probe.reshape(shape))
        fd.ravel()[i] = (hi - lo) / (2.0 * h)

    scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(fd), 1e-6 * scale)
    return float((np.abs(analytic - fd) / denom).max())
