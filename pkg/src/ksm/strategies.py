"""The mask ablation grid: granularity x value model x gradient rule.

Six named mask strategies cover the cube corners that matter, plus the
fine-tune-everything reference which learns no masks at all and is the
one configuration allowed to forget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, default_dtype, make_op, no_grad
from .masks import (
    MaskHyperparams,
    compose_soft_mask,
    harden,
    keep_probability,
    relax_sigmoid,
    scaling_tensor,
)
from .model import BackboneConfig, ConvSpec

GRANULARITIES = ("kernel", "element")
VALUE_MODELS = ("binary", "soft")
GRADIENT_RULES = ("ste", "softmax")


@dataclass(frozen=True)
class StrategySpec:
    """One cell of the ablation grid."""

    granularity: str = "kernel"
    values: str = "soft"
    rule: str = "softmax"
    finetune: bool = False

    def __post_init__(self):
        if self.finetune:
            return
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity: {self.granularity!r}")
        if self.values not in VALUE_MODELS:
            raise ValueError(f"unknown value model: {self.values!r}")
        if self.rule not in GRADIENT_RULES:
            raise ValueError(f"unknown gradient rule: {self.rule!r}")


STRATEGIES: dict[str, StrategySpec] = {
    "piggyback": StrategySpec("element", "binary", "ste"),
    "piggyback-kernel": StrategySpec("kernel", "binary", "ste"),
    "piggyback-soft": StrategySpec("element", "soft", "ste"),
    "softmax-binary": StrategySpec("kernel", "binary", "softmax"),
    "ksm-elementwise": StrategySpec("element", "soft", "softmax"),
    "ksm": StrategySpec("kernel", "soft", "softmax"),
    "finetune": StrategySpec(finetune=True),
}


def strategy_name(spec: StrategySpec) -> str:
    for name, s in STRATEGIES.items():
        if s == spec:
            return name
    if spec.finetune:
        return "finetune"
    return f"{spec.granularity}-{spec.values}-{spec.rule}"


def ste_binarize(mask: Tensor, tau: float) -> Tensor:
    """Hard threshold at tau whose gradient passes straight through."""
    bits = (mask.data >= tau).astype(mask.data.dtype)

    def rule(g):
        return (g,)

    return make_op("ste_binarize", (mask,), bits, rule)


class MaskPipeline:
    """Builds live masks during training and frozen masks afterwards."""

    def __init__(self, spec: StrategySpec, hyper: MaskHyperparams):
        if spec.finetune:
            raise ValueError("the fine-tune baseline has no mask pipeline")
        self.spec = spec
        self.hyper = hyper

    @property
    def finetune(self) -> bool:
        return False

    def mask_shape(self, c_out: int, c_in: int, kh: int, kw: int) -> tuple[int, ...]:
        if self.spec.granularity == "kernel":
            return (c_out, c_in)
        return (c_out, c_in, kh, kw)

    def init_masks(self, config: BackboneConfig) -> dict[int, Tensor]:
        """One real mask per conv layer, every entry at init_value."""
        dt = default_dtype()
        in_ch = config.conv_in_channels()
        out = {}
        for i, spec in config.conv_specs().items():
            shape = self.mask_shape(spec.c_out, in_ch[i], spec.kh, spec.kw)
            out[i] = Tensor(np.full(shape, self.hyper.init_value, dtype=dt), requires_grad=True)
        return out

    def live_mask(self, mask: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """The differentiable mask used in a training forward pass."""
        if self.spec.rule == "ste":
            bits = ste_binarize(mask, self.hyper.tau)
        else:
            noise = None
            if self.hyper.gumbel and rng is not None:
                noise = rng.logistic(size=mask.data.shape).astype(mask.data.dtype)
            bits = harden(keep_probability(relax_sigmoid(mask, self.hyper),
                                           self.hyper.temperature, noise))
        if self.spec.values == "binary":
            return bits
        return compose_soft_mask(bits, scaling_tensor(mask, bits))

    def freeze_mask(self, mask: Tensor) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic bits and float32 scales for the finished mask."""
        with no_grad():
            if self.spec.rule == "ste":
                bits_t = ste_binarize(mask, self.hyper.tau)
            else:
                bits_t = harden(keep_probability(relax_sigmoid(mask, self.hyper),
                                                 self.hyper.temperature))
            if self.spec.values == "soft":
                scales = scaling_tensor(mask, bits_t).data
            else:
                scales = np.zeros_like(bits_t.data)
        return bits_t.data.astype(np.uint8), scales.astype(np.float32)


class FinetunePipeline:
    """Marker pipeline: unfreezes a cloned backbone instead of masking."""

    spec = STRATEGIES["finetune"]

    def __init__(self, hyper: MaskHyperparams):
        self.hyper = hyper

    @property
    def finetune(self) -> bool:
        return True


def make_strategy(spec: StrategySpec | str, hyper: MaskHyperparams | None = None):
    """Resolve a strategy name or spec into a pipeline."""
    if isinstance(spec, str):
        if spec not in STRATEGIES:
            raise ValueError(f"unknown strategy: {spec!r} (choose from {sorted(STRATEGIES)})")
        spec = STRATEGIES[spec]
    hyper = hyper if hyper is not None else MaskHyperparams()
    if spec.finetune:
        return FinetunePipeline(hyper)
    return MaskPipeline(spec, hyper)
