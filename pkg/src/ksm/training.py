"""Sequential task training.

The first task trains the backbone itself (plus its norms and head);
the backbone is then frozen and hashed. Every later task optimizes only
its own real masks, batch-norm parameters and classifier head, so
finished tasks can never degrade, which the accuracy matrix makes
observable. The fine-tune baseline instead keeps updating one shared
backbone copy and is expected to forget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import TaskDescriptor, TaskSequence, task_arrays
from .engine import (
    ContractError,
    Optimizer,
    Tensor,
    backward,
    default_dtype,
    lift,
    no_grad,
    softmax_cross_entropy,
)
from .masks import MaskHyperparams
from .model import (
    Backbone,
    BackboneConfig,
    KernelMaskSet,
    NormArrays,
    NormState,
    TaskArtifact,
    artifact_forward,
    default_backbone,
    network_forward,
)
from .strategies import (
    FinetunePipeline,
    MaskPipeline,
    StrategySpec,
    STRATEGIES,
    make_strategy,
    strategy_name,
)


@dataclass
class TrainConfig:
    """Everything a run needs besides the data."""

    epochs: int = 10
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 1e-4
    milestones: tuple[int, ...] = (5,)
    lr_decay: float = 0.1
    seed: int = 0
    strategy: StrategySpec = field(default_factory=lambda: STRATEGIES["ksm"])
    hyper: MaskHyperparams = field(default_factory=MaskHyperparams)
    max_train_per_task: Optional[int] = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if isinstance(self.strategy, str):
            self.strategy = STRATEGIES[self.strategy]

    def describe(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "lr": self.lr,
            "milestones": list(self.milestones),
            "lr_decay": self.lr_decay,
            "seed": self.seed,
            "strategy": strategy_name(self.strategy),
            "hyper": {
                "k": self.hyper.k,
                "tau": self.hyper.tau,
                "temperature": self.hyper.temperature,
                "init_value": self.hyper.init_value,
                "gumbel": self.hyper.gumbel,
            },
            "max_train_per_task": self.max_train_per_task,
        }


@dataclass
class TaskTrainState:
    """Live trainable state for one task."""

    task: TaskDescriptor
    backbone: Backbone
    pipeline: MaskPipeline | FinetunePipeline
    real_masks: dict[int, Tensor]
    norms: dict[int, NormState]
    head_w: Tensor
    head_b: Tensor
    train_backbone: bool = False
    noise_rng: Optional[np.random.Generator] = None

    def trainable_parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        if self.train_backbone:
            params.extend(self.backbone.parameters())
        params.extend(self.real_masks[i] for i in sorted(self.real_masks))
        for i in sorted(self.norms):
            params.append(self.norms[i].gamma)
            params.append(self.norms[i].beta)
        params.append(self.head_w)
        params.append(self.head_b)
        return params

    def forward(self, x: np.ndarray, training: bool) -> Tensor:
        xt = lift(np.asarray(x, dtype=default_dtype()))
        masks = None
        if self.real_masks:
            rng = self.noise_rng if training else None
            masks = {
                i: self.pipeline.live_mask(m, rng) for i, m in self.real_masks.items()
            }
        return network_forward(
            self.backbone, xt, masks, self.norms, self.head_w, self.head_b, training
        )

    def to_artifact(
        self,
        backbone_hash: Optional[str],
        strategy: StrategySpec,
        weights_ref: Optional[Backbone] = None,
    ) -> TaskArtifact:
        conv_specs = self.backbone.config.conv_specs()
        bits: dict[int, np.ndarray] = {}
        scales: dict[int, np.ndarray] = {}
        kernel_sizes = {i: (s.kh, s.kw) for i, s in conv_specs.items()}
        real: Optional[KernelMaskSet] = None
        if self.real_masks:
            for i in sorted(self.real_masks):
                b, sc = self.pipeline.freeze_mask(self.real_masks[i])
                bits[i] = b
                scales[i] = sc
            real = KernelMaskSet(
                masks={i: m.data.copy() for i, m in self.real_masks.items()},
                hyper=self.pipeline.hyper,
            )
        return TaskArtifact(
            task_id=self.task.task_id,
            class_ids=self.task.class_ids,
            strategy_name=strategy_name(strategy),
            hyper=self.pipeline.hyper,
            bits=bits,
            scales=scales,
            kernel_sizes=kernel_sizes,
            head_w=self.head_w.data.copy(),
            head_b=self.head_b.data.copy(),
            norms={
                i: NormArrays(
                    gamma=ns.gamma.data.copy(),
                    beta=ns.beta.data.copy(),
                    running_mean=ns.running_mean.copy(),
                    running_var=ns.running_var.copy(),
                )
                for i, ns in self.norms.items()
            },
            real_masks=real,
            backbone_hash=backbone_hash,
            weights_ref=weights_ref,
        )


def _fresh_norms(config: BackboneConfig) -> dict[int, NormState]:
    return {
        i: NormState.fresh(spec.c_out)
        for i, spec in config.conv_specs().items()
        if spec.norm
    }


def _fresh_head(config: BackboneConfig, n_classes: int) -> tuple[Tensor, Tensor]:
    dt = default_dtype()
    feat = config.feature_dim()
    return (
        Tensor(np.zeros((n_classes, feat), dtype=dt), requires_grad=True),
        Tensor(np.zeros(n_classes, dtype=dt), requires_grad=True),
    )


def new_task_state(
    task: TaskDescriptor,
    backbone: Backbone,
    cfg: TrainConfig,
    train_backbone: bool = False,
    with_masks: bool = True,
) -> TaskTrainState:
    pipeline = make_strategy(cfg.strategy, cfg.hyper)
    real_masks: dict[int, Tensor] = {}
    noise_rng = None
    if with_masks and not pipeline.finetune:
        real_masks = pipeline.init_masks(backbone.config)
        if cfg.hyper.gumbel:
            noise_rng = np.random.default_rng((cfg.seed, task.task_id, 7))
    head_w, head_b = _fresh_head(backbone.config, len(task.class_ids))
    return TaskTrainState(
        task=task,
        backbone=backbone,
        pipeline=pipeline,
        real_masks=real_masks,
        norms=_fresh_norms(backbone.config),
        head_w=head_w,
        head_b=head_b,
        train_backbone=train_backbone,
        noise_rng=noise_rng,
    )


def _fit(state: TaskTrainState, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> float:
    """Optimize the state in place; returns process seconds spent in the loop."""
    params = state.trainable_parameters()
    opt = Optimizer(
        params, cfg.optimizer, cfg.lr, milestones=cfg.milestones, decay=cfg.lr_decay
    )
    rng = np.random.default_rng((cfg.seed, state.task.task_id))
    n = len(y)
    started = time.process_time()
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            pick = order[lo : lo + cfg.batch_size]
            logits = state.forward(x[pick], training=True)
            loss = softmax_cross_entropy(logits, y[pick])
            backward(loss)
            opt.step()
    return time.process_time() - started


def train_initial(
    seq: TaskSequence, task: TaskDescriptor, cfg: TrainConfig,
    backbone_config: Optional[BackboneConfig] = None,
) -> tuple[Backbone, TaskArtifact, float]:
    """Train the backbone on the initial task, freeze it, return its artifact.

    The initial task's artifact carries explicit all-ones masks: it is
    evaluated through the same masked path as every other task.
    """
    config = backbone_config or default_backbone(seq.dataset.image_shape)
    backbone = Backbone.build(config, seed=cfg.seed)
    state = new_task_state(task, backbone, cfg, train_backbone=True, with_masks=False)
    rng = np.random.default_rng((cfg.seed, task.task_id, 3))
    x, y = task_arrays(seq.dataset, task, "train", default_dtype(),
                       cfg.max_train_per_task, rng)
    seconds = _fit(state, x, y, cfg)
    backbone.freeze()
    bhash = backbone.content_hash()

    artifact = state.to_artifact(bhash, cfg.strategy)
    in_ch = config.conv_in_channels()
    pipeline = make_strategy(cfg.strategy, cfg.hyper)
    for i, spec in config.conv_specs().items():
        if isinstance(pipeline, MaskPipeline):
            shape = pipeline.mask_shape(spec.c_out, in_ch[i], spec.kh, spec.kw)
        else:
            shape = (spec.c_out, in_ch[i])
        artifact.bits[i] = np.ones(shape, dtype=np.uint8)
        artifact.scales[i] = np.zeros(shape, dtype=np.float32)
    return backbone, artifact, seconds


def train_task(
    seq: TaskSequence, task: TaskDescriptor, backbone: Backbone, cfg: TrainConfig
) -> tuple[TaskArtifact, float]:
    """Learn one later task on top of the frozen backbone."""
    finetune = cfg.strategy.finetune
    if not backbone.frozen and not finetune:
        raise ContractError("backbone must be frozen before mask training")
    before = None if finetune else backbone.content_hash()

    state = new_task_state(task, backbone, cfg, train_backbone=finetune)
    rng = np.random.default_rng((cfg.seed, task.task_id, 3))
    x, y = task_arrays(seq.dataset, task, "train", default_dtype(),
                       cfg.max_train_per_task, rng)
    seconds = _fit(state, x, y, cfg)

    if not finetune:
        after = backbone.content_hash()
        if after != before:
            raise ContractError("frozen backbone changed during mask training")
    ref = backbone if finetune else None
    return state.to_artifact(before, cfg.strategy, weights_ref=ref), seconds


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    loss: float
    n: int


def evaluate(
    backbone: Backbone, artifact: TaskArtifact, seq: TaskSequence,
    task: Optional[TaskDescriptor] = None, batch_size: int = 256,
) -> EvalResult:
    """Test-set accuracy of one artifact; deterministic for fixed inputs."""
    if task is None:
        matches = [t for t in seq.tasks if t.class_ids == artifact.class_ids]
        if not matches:
            raise KeyError(f"no task in the sequence has classes {artifact.class_ids}")
        task = matches[0]
    x, y = task_arrays(seq.dataset, task, "test", default_dtype())
    correct = 0
    loss_sum = 0.0
    for lo in range(0, len(y), batch_size):
        logits = artifact_forward(backbone, artifact, x[lo : lo + batch_size])
        pred = logits.argmax(axis=1)
        correct += int((pred == y[lo : lo + batch_size]).sum())
        with no_grad():
            loss = softmax_cross_entropy(lift(logits), y[lo : lo + batch_size])
        loss_sum += float(loss.data) * len(pred)
    n = len(y)
    return EvalResult(accuracy=correct / n, loss=loss_sum / n, n=n)


@dataclass
class RunLedger:
    """Accuracies and timings of one sequential run.

    ``matrix[i][j]`` is task i's test accuracy measured right after task
    j finished training (positions follow training order); None below
    the diagonal.
    """

    strategy: str
    seed: int
    epochs: int
    task_ids: list[int]
    class_ids: list[tuple[int, ...]]
    accuracies: list[float]
    seconds: list[float]
    matrix: list[list[Optional[float]]]


@dataclass
class RunResult:
    ledger: RunLedger
    backbone: Backbone
    artifacts: dict[int, TaskArtifact]


def run_sequence(
    seq: TaskSequence,
    cfg: TrainConfig,
    backbone_config: Optional[BackboneConfig] = None,
    init_task: Optional[int] = None,
) -> RunResult:
    """Train every task in order (optionally starting from a chosen task).

    ``init_task`` names the task id trained first (the backbone task);
    the remaining tasks keep their original order.
    """
    order = list(seq.tasks)
    if init_task is not None:
        ids = [t.task_id for t in order]
        if init_task not in ids:
            raise ValueError(f"init task {init_task} not in sequence {ids}")
        first = order.pop(ids.index(init_task))
        order.insert(0, first)

    backbone, artifact0, sec0 = train_initial(seq, order[0], cfg, backbone_config)
    bhash = backbone.content_hash()

    shared_clone: Optional[Backbone] = None
    if cfg.strategy.finetune:
        shared_clone = backbone.clone(trainable=True)
        artifact0.weights_ref = shared_clone

    artifacts: dict[int, TaskArtifact] = {order[0].task_id: artifact0}
    seconds = [sec0]
    positions = [order[0]]
    matrix: list[list[Optional[float]]] = []

    def eval_column() -> None:
        column = [
            evaluate(backbone, artifacts[t.task_id], seq, t).accuracy for t in positions
        ]
        row_count = len(positions)
        for i, row in enumerate(matrix):
            row.append(column[i])
        matrix.append([None] * (row_count - 1) + [column[-1]])

    eval_column()

    for task in order[1:]:
        if cfg.strategy.finetune:
            artifact, sec = train_task(seq, task, shared_clone, cfg)
        else:
            artifact, sec = train_task(seq, task, backbone, cfg)
        artifacts[task.task_id] = artifact
        seconds.append(sec)
        positions.append(task)
        eval_column()
        if not cfg.strategy.finetune and backbone.content_hash() != bhash:
            raise ContractError("backbone hash drifted between tasks")

    ledger = RunLedger(
        strategy=strategy_name(cfg.strategy),
        seed=cfg.seed,
        epochs=cfg.epochs,
        task_ids=[t.task_id for t in positions],
        class_ids=[t.class_ids for t in positions],
        accuracies=[matrix[i][len(positions) - 1] for i in range(len(positions))],
        seconds=seconds,
        matrix=matrix,
    )
    return RunResult(ledger=ledger, backbone=backbone, artifacts=artifacts)
