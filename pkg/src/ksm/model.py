"""Convolutional backbone with per-task masked forward passes.

The backbone (conv stack plus one dense feature layer) is trained once,
frozen, and never touched again. Every later task learns a mask per conv
layer, its own batch-norm parameters, and its own classifier head; the
masked forward pass scales the frozen kernels by the task's mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import (
    ContractError,
    ShapeError,
    Tensor,
    batch_norm2d,
    conv2d,
    default_dtype,
    dense,
    lift,
    max_pool2d,
    no_grad,
    relu,
)
from .masks import MaskHyperparams


@dataclass(frozen=True)
class ConvSpec:
    c_out: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    pad: int = 1
    norm: bool = True
    relu: bool = True


@dataclass(frozen=True)
class PoolSpec:
    k: int = 2


@dataclass(frozen=True)
class DenseSpec:
    width: int
    relu: bool = True


@dataclass(frozen=True)
class BackboneConfig:
    """Layer stack and input geometry of the shared feature extractor."""

    input_shape: tuple[int, int, int]
    layers: tuple = ()

    def __post_init__(self):
        self.feature_dim()  # validates that the stack composes

    def conv_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if isinstance(s, ConvSpec)]

    def conv_specs(self) -> dict[int, ConvSpec]:
        return {i: s for i, s in enumerate(self.layers) if isinstance(s, ConvSpec)}

    def conv_in_channels(self) -> dict[int, int]:
        """Input channel count seen by each conv layer."""
        c = self.input_shape[0]
        out = {}
        for i, spec in enumerate(self.layers):
            if isinstance(spec, ConvSpec):
                out[i] = c
                c = spec.c_out
        return out

    def feature_dim(self) -> int:
        """Propagate shapes through the stack; raises if it cannot compose."""
        c, h, w = self.input_shape
        flat: Optional[int] = None
        for i, spec in enumerate(self.layers):
            if isinstance(spec, ConvSpec):
                if flat is not None:
                    raise ShapeError("conv layer after dense layer")
                if h + 2 * spec.pad < spec.kh or w + 2 * spec.pad < spec.kw:
                    raise ShapeError(f"layer {i}: kernel does not fit input {(h, w)}")
                h = (h + 2 * spec.pad - spec.kh) // spec.stride + 1
                w = (w + 2 * spec.pad - spec.kw) // spec.stride + 1
                c = spec.c_out
            elif isinstance(spec, PoolSpec):
                if flat is not None:
                    raise ShapeError("pool layer after dense layer")
                if h % spec.k or w % spec.k:
                    raise ShapeError(f"layer {i}: spatial dims {(h, w)} not divisible by {spec.k}")
                h //= spec.k
                w //= spec.k
            elif isinstance(spec, DenseSpec):
                flat = spec.width
            else:
                raise TypeError(f"unknown layer spec: {spec!r}")
        return flat if flat is not None else c * h * w

    def to_json(self) -> str:
        items = []
        for spec in self.layers:
            if isinstance(spec, ConvSpec):
                items.append(["conv", spec.c_out, spec.kh, spec.kw, spec.stride, spec.pad,
                              int(spec.norm), int(spec.relu)])
            elif isinstance(spec, PoolSpec):
                items.append(["pool", spec.k])
            else:
                items.append(["dense", spec.width, int(spec.relu)])
        return json.dumps({"input_shape": list(self.input_shape), "layers": items},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "BackboneConfig":
        raw = json.loads(text)
        layers = []
        for item in raw["layers"]:
            if item[0] == "conv":
                layers.append(ConvSpec(item[1], item[2], item[3], item[4], item[5],
                                       bool(item[6]), bool(item[7])))
            elif item[0] == "pool":
                layers.append(PoolSpec(item[1]))
            else:
                layers.append(DenseSpec(item[1], bool(item[2])))
        return cls(input_shape=tuple(raw["input_shape"]), layers=tuple(layers))


def default_backbone(input_shape: tuple[int, int, int] = (3, 32, 32)) -> BackboneConfig:
    """Desk-scale stack: four conv blocks (32, 64, 128, 128) and a 128-wide feature layer."""
    return BackboneConfig(
        input_shape=input_shape,
        layers=(
            ConvSpec(32), PoolSpec(),
            ConvSpec(64), PoolSpec(),
            ConvSpec(128), PoolSpec(),
            ConvSpec(128), PoolSpec(),
            DenseSpec(128),
        ),
    )


def compact_backbone(input_shape: tuple[int, int, int] = (3, 32, 32),
                     widths: tuple[int, ...] = (16, 32, 64),
                     feature_width: int = 64) -> BackboneConfig:
    """Smaller stack for fast experiments and tests."""
    layers: list = []
    for c in widths:
        layers.append(ConvSpec(c))
        layers.append(PoolSpec())
    layers.append(DenseSpec(feature_width))
    return BackboneConfig(input_shape=input_shape, layers=tuple(layers))


def vgg16_bn(input_shape: tuple[int, int, int] = (3, 32, 32),
             feature_width: int = 512) -> BackboneConfig:
    """The thirteen-conv VGG-16 stack with batch norm, for larger runs."""
    plan = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    layers: list = []
    for width, reps in plan:
        for _ in range(reps):
            layers.append(ConvSpec(width))
        layers.append(PoolSpec())
    layers.append(DenseSpec(feature_width))
    return BackboneConfig(input_shape=input_shape, layers=tuple(layers))


class Backbone:
    """The shared feature extractor: conv kernels plus the dense feature map.

    Weights are trainable only until ``freeze()``; afterwards any attempt
    to optimize them violates the training contract and the content hash
    pins their exact bytes.
    """

    def __init__(self, config: BackboneConfig, weights: dict[str, Tensor], frozen: bool = False):
        self.config = config
        self.weights = weights
        self.frozen = frozen

    @classmethod
    def build(cls, config: BackboneConfig, seed: int = 0) -> "Backbone":
        rng = np.random.default_rng(seed)
        dt = default_dtype()
        weights: dict[str, Tensor] = {}
        c, h, w = config.input_shape
        for i, spec in enumerate(config.layers):
            if isinstance(spec, ConvSpec):
                fan_in = c * spec.kh * spec.kw
                k = rng.normal(0.0, np.sqrt(2.0 / fan_in), (spec.c_out, c, spec.kh, spec.kw))
                weights[f"conv{i}"] = Tensor(k.astype(dt), requires_grad=True)
                c = spec.c_out
                h = (h + 2 * spec.pad - spec.kh) // spec.stride + 1
                w = (w + 2 * spec.pad - spec.kw) // spec.stride + 1
            elif isinstance(spec, PoolSpec):
                h //= spec.k
                w //= spec.k
            elif isinstance(spec, DenseSpec):
                fan_in = c * h * w
                mat = rng.normal(0.0, np.sqrt(2.0 / fan_in), (spec.width, fan_in))
                weights[f"dense{i}_w"] = Tensor(mat.astype(dt), requires_grad=True)
                weights[f"dense{i}_b"] = Tensor(np.zeros(spec.width, dtype=dt), requires_grad=True)
        return cls(config, weights)

    def parameters(self) -> list[Tensor]:
        return [self.weights[name] for name in sorted(self.weights)]

    def freeze(self) -> None:
        for t in self.weights.values():
            t.requires_grad = False
            t._grad = None
        self.frozen = True

    def clone(self, trainable: bool = False) -> "Backbone":
        weights = {
            name: Tensor(t.data.copy(), requires_grad=trainable, dtype=t.data.dtype)
            for name, t in self.weights.items()
        }
        return Backbone(self.config, weights, frozen=not trainable)

    def content_hash(self) -> str:
        """SHA-256 over the config and the exact weight bytes."""
        digest = hashlib.sha256()
        digest.update(self.config.to_json().encode())
        for name in sorted(self.weights):
            arr = np.ascontiguousarray(self.weights[name].data)
            digest.update(name.encode())
            digest.update(str(arr.dtype).encode())
            digest.update(str(arr.shape).encode())
            digest.update(arr.tobytes())
        return digest.hexdigest()


@dataclass
class NormState:
    """Per-task batch-norm parameters for one conv layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=None) -> "NormState":
        dt = dtype if dtype is not None else default_dtype()
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dt), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dt), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dt),
            running_var=np.ones(channels, dtype=dt),
        )


@dataclass(frozen=True)
class NormArrays:
    """Frozen batch-norm parameters as stored in a task artifact."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class KernelMaskSet:
    """Real-valued masks per conv layer, kept so training can resume."""

    masks: dict[int, np.ndarray]
    hyper: MaskHyperparams


@dataclass
class TaskArtifact:
    """Everything needed to evaluate one task against the frozen backbone.

    ``bits`` and ``scales`` are the frozen soft mask per conv layer
    (scales are zero wherever a bit is set). For the fine-tune baseline
    there are no masks and ``weights_ref`` points at the shared, still
    mutable backbone copy.
    """

    task_id: int
    class_ids: tuple[int, ...]
    strategy_name: str
    hyper: MaskHyperparams
    bits: dict[int, np.ndarray] = field(default_factory=dict)
    scales: dict[int, np.ndarray] = field(default_factory=dict)
    kernel_sizes: dict[int, tuple[int, int]] = field(default_factory=dict)
    head_w: Optional[np.ndarray] = None
    head_b: Optional[np.ndarray] = None
    norms: dict[int, NormArrays] = field(default_factory=dict)
    real_masks: Optional[KernelMaskSet] = None
    backbone_hash: Optional[str] = None
    weights_ref: Optional[Backbone] = None

    def mask_tensors(self, dtype) -> Optional[dict[int, Tensor]]:
        if not self.bits:
            return None
        out = {}
        for i, b in self.bits.items():
            composed = b.astype(dtype) + self.scales[i].astype(dtype)
            out[i] = lift(composed)
        return out


def masked_conv_forward(x: Tensor, weight: Tensor, mask: Tensor,
                        stride: int = 1, pad: int = 0) -> Tensor:
    """Convolution with kernels scaled by a per-kernel or per-element mask.

    A 2-D mask (c_out, c_in) scales whole kernels; a 4-D mask matching the
    weight scales individual elements.
    """
    if mask.data.ndim == 2:
        co, ci = mask.data.shape
        if weight.data.shape[:2] != (co, ci):
            raise ShapeError(
                f"mask {mask.data.shape} does not match weight {weight.data.shape}"
            )
        scaled = weight * mask.reshape(co, ci, 1, 1)
    elif mask.data.ndim == 4:
        if weight.data.shape != mask.data.shape:
            raise ShapeError(
                f"mask {mask.data.shape} does not match weight {weight.data.shape}"
            )
        scaled = weight * mask
    else:
        raise ShapeError("mask must be 2-D (kernel-wise) or 4-D (element-wise)")
    return conv2d(x, scaled, stride=stride, pad=pad)


def network_forward(
    backbone: Backbone,
    x: Tensor,
    masks: Optional[dict[int, Tensor]],
    norms: dict[int, NormState],
    head_w: Tensor,
    head_b: Tensor,
    training: bool,
) -> Tensor:
    """Full forward pass: masked features then the task head."""
    h = feature_forward(backbone, x, masks, norms, training)
    return dense(h, head_w, head_b)


def feature_forward(
    backbone: Backbone,
    x: Tensor,
    masks: Optional[dict[int, Tensor]],
    norms: dict[int, NormState],
    training: bool,
) -> Tensor:
    h = x
    for i, spec in enumerate(backbone.config.layers):
        if isinstance(spec, ConvSpec):
            w = backbone.weights[f"conv{i}"]
            if masks is not None and i in masks:
                h = masked_conv_forward(h, w, masks[i], stride=spec.stride, pad=spec.pad)
            else:
                h = conv2d(h, w, stride=spec.stride, pad=spec.pad)
            if spec.norm:
                ns = norms[i]
                h = batch_norm2d(h, ns.gamma, ns.beta, ns.running_mean, ns.running_var, training)
            if spec.relu:
                h = relu(h)
        elif isinstance(spec, PoolSpec):
            h = max_pool2d(h, spec.k)
        elif isinstance(spec, DenseSpec):
            if h.ndim == 4:
                h = h.reshape(h.shape[0], -1)
            h = dense(h, backbone.weights[f"dense{i}_w"], backbone.weights[f"dense{i}_b"])
            if spec.relu:
                h = relu(h)
    return h


class MaskedModel:
    """A frozen backbone plus the task artifacts learned on top of it."""

    def __init__(self, backbone: Backbone):
        self.backbone = backbone
        self.artifacts: dict[int, TaskArtifact] = {}

    def add_artifact(self, artifact: TaskArtifact) -> None:
        if artifact.backbone_hash is not None and artifact.weights_ref is None:
            current = self.backbone.content_hash()
            if artifact.backbone_hash != current:
                raise ContractError(
                    "artifact was trained against a different backbone "
                    f"({artifact.backbone_hash[:12]} != {current[:12]})"
                )
        self.artifacts[artifact.task_id] = artifact

    def forward_task(self, x: np.ndarray, task_id: int) -> np.ndarray:
        """Logits for one task, shape (batch, classes in that task)."""
        if task_id not in self.artifacts:
            raise KeyError(f"no artifact for task {task_id}")
        artifact = self.artifacts[task_id]
        return artifact_forward(self.backbone, artifact, x)


def artifact_forward(backbone: Backbone, artifact: TaskArtifact, x: np.ndarray) -> np.ndarray:
    """Evaluation-mode forward through a frozen task artifact."""
    source = artifact.weights_ref if artifact.weights_ref is not None else backbone
    dt = next(iter(source.weights.values())).data.dtype
    with no_grad():
        xt = lift(np.asarray(x, dtype=dt))
        masks = artifact.mask_tensors(dt)
        norms = {
            i: NormState(
                gamma=lift(na.gamma.astype(dt)),
                beta=lift(na.beta.astype(dt)),
                running_mean=na.running_mean.astype(dt),
                running_var=na.running_var.astype(dt),
            )
            for i, na in artifact.norms.items()
        }
        logits = network_forward(
            source, xt, masks, norms,
            lift(artifact.head_w.astype(dt)), lift(artifact.head_b.astype(dt)),
            training=False,
        )
    return logits.data
