"""Continual learning by kernel-wise soft masks over a frozen backbone.

A backbone is trained once and frozen. Each later task learns a mask per
conv layer: a binary keep/drop decision per kernel, relaxed through a
steep logistic and a temperature-controlled two-way softmax so it can be
optimized by gradient descent, then superposed with a scaling tensor
that re-weights dropped kernels instead of silencing them. Finished
tasks are immutable artifacts, so nothing is ever forgotten.
"""

from .data import (
    Dataset,
    DataMissingError,
    DatasetError,
    FormatError,
    Split,
    TaskDescriptor,
    TaskSequence,
    load_cifar,
    save_cifar_binary,
    split_tasks,
    synthetic_tasks,
)
from .masks import (
    MaskHyperparams,
    MaskSupportError,
    RelaxedMask,
    compose_soft_mask,
    harden,
    keep_probability,
    mask_chain_gradient_check,
    minmax_normalize,
    relax_sigmoid,
    relaxation_parts,
    scaling_tensor,
)
from .model import (
    Backbone,
    BackboneConfig,
    ConvSpec,
    DenseSpec,
    KernelMaskSet,
    MaskedModel,
    NormArrays,
    NormState,
    PoolSpec,
    TaskArtifact,
    artifact_forward,
    compact_backbone,
    default_backbone,
    masked_conv_forward,
    vgg16_bn,
)
from .reporting import (
    LayerMaskStats,
    ledger_csv,
    ledger_json,
    mask_layer_stats,
    overhead_summary,
    stats_csv,
)
from .store import (
    CountMismatchError,
    HashMismatchError,
    MagicError,
    StoreError,
    TruncatedError,
    load_checkpoint,
    load_mask,
    mask_file_size,
    save_checkpoint,
    save_mask,
)
from .strategies import (
    STRATEGIES,
    FinetunePipeline,
    MaskPipeline,
    StrategySpec,
    make_strategy,
    ste_binarize,
    strategy_name,
)
from .training import (
    EvalResult,
    RunLedger,
    RunResult,
    TaskTrainState,
    TrainConfig,
    evaluate,
    new_task_state,
    run_sequence,
    train_initial,
    train_task,
)

__version__ = "0.1.0"
