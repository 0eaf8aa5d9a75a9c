"""Datasets and task splits.

CIFAR images arrive in the standard binary layouts: one record per
image, a label byte (two for the 100-class variant: coarse then fine)
followed by 3072 channel-major pixel bytes. A task sequence slices a
dataset into disjoint class groups; the synthetic generator fabricates
low-frequency class templates so desk-scale runs need no downloads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter


class DatasetError(Exception):
    """Base class for dataset problems."""


class DataMissingError(DatasetError):
    """Expected data files are absent."""


class FormatError(DatasetError):
    """A data file exists but does not parse."""


CIFAR10_RECORD = 3073
CIFAR100_RECORD = 3074
IMAGE_BYTES = 3072

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)


@dataclass
class Split:
    """One partition of a dataset."""

    images: np.ndarray  # uint8, (N, C, H, W)
    labels: np.ndarray  # int64, (N,)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError("images must be (N, C, H, W)")
        if self.labels.shape != (self.images.shape[0],):
            raise FormatError("labels must align with images")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class Dataset:
    """Train and test splits plus class metadata and normalization constants."""

    train: Split
    test: Split
    class_names: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        n = len(self.class_names)
        for split in (self.train, self.test):
            if len(split) and (split.labels.min() < 0 or split.labels.max() >= n):
                raise FormatError(f"label outside [0, {n})")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.train.images.shape[1:])


@dataclass(frozen=True)
class TaskDescriptor:
    """One task: a class subset with precomputed row indices."""

    task_id: int
    class_ids: tuple[int, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class TaskSequence:
    dataset: Dataset
    tasks: list[TaskDescriptor]

    def __len__(self) -> int:
        return len(self.tasks)


def _parse_records(raw: np.ndarray, record: int, label_col: int) -> tuple[np.ndarray, np.ndarray]:
    if raw.size % record:
        raise FormatError(
            f"file size {raw.size} is not a multiple of the record size {record}"
        )
    rows = raw.reshape(-1, record)
    labels = rows[:, label_col].astype(np.int64)
    images = rows[:, record - IMAGE_BYTES:].reshape(-1, 3, 32, 32)
    return images, labels


def _read_split(files: list[Path], record: int, label_col: int) -> Split:
    images, labels = [], []
    for f in files:
        raw = np.fromfile(f, dtype=np.uint8)
        img, lab = _parse_records(raw, record, label_col)
        images.append(img)
        labels.append(lab)
    return Split(images=np.concatenate(images), labels=np.concatenate(labels))


def load_cifar(path: str | os.PathLike, variant: str = "cifar10") -> Dataset:
    """Load CIFAR binaries from a directory (or its standard subdirectory)."""
    if variant not in ("cifar10", "cifar100"):
        raise ValueError(f"unknown variant: {variant!r}")
    base = Path(path)
    subdir = "cifar-10-batches-bin" if variant == "cifar10" else "cifar-100-binary"
    roots = [base, base / subdir]

    if variant == "cifar10":
        for root in roots:
            train_files = sorted(root.glob("data_batch_*.bin"))
            test_file = root / "test_batch.bin"
            if train_files and test_file.exists():
                train = _read_split(train_files, CIFAR10_RECORD, 0)
                test = _read_split([test_file], CIFAR10_RECORD, 0)
                return Dataset(train, test, CIFAR10_CLASSES, CIFAR10_MEAN, CIFAR10_STD)
        raise DataMissingError(f"no CIFAR-10 binaries under {base}")

    for root in roots:
        train_file, test_file = root / "train.bin", root / "test.bin"
        if train_file.exists() and test_file.exists():
            train = _read_split([train_file], CIFAR100_RECORD, 1)
            test = _read_split([test_file], CIFAR100_RECORD, 1)
            names = _cifar100_names(root)
            return Dataset(train, test, names, CIFAR100_MEAN, CIFAR100_STD)
    raise DataMissingError(f"no CIFAR-100 binaries under {base}")


def _cifar100_names(root: Path) -> tuple[str, ...]:
    meta = root / "fine_label_names.txt"
    if meta.exists():
        names = tuple(line.strip() for line in meta.read_text().splitlines() if line.strip())
        if len(names) == 100:
            return names
    return tuple(f"class_{i:03d}" for i in range(100))


def save_cifar_binary(dataset: Dataset, path: str | os.PathLike, variant: str = "cifar10") -> None:
    """Write a dataset back out in the CIFAR binary layout."""
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)

    def record_block(split: Split) -> bytes:
        n = len(split)
        if variant == "cifar10":
            rows = np.empty((n, CIFAR10_RECORD), dtype=np.uint8)
            rows[:, 0] = split.labels
            rows[:, 1:] = split.images.reshape(n, IMAGE_BYTES)
        else:
            rows = np.empty((n, CIFAR100_RECORD), dtype=np.uint8)
            rows[:, 0] = 0  # coarse label, unused
            rows[:, 1] = split.labels
            rows[:, 2:] = split.images.reshape(n, IMAGE_BYTES)
        return rows.tobytes()

    if variant == "cifar10":
        (base / "data_batch_1.bin").write_bytes(record_block(dataset.train))
        (base / "test_batch.bin").write_bytes(record_block(dataset.test))
    elif variant == "cifar100":
        (base / "train.bin").write_bytes(record_block(dataset.train))
        (base / "test.bin").write_bytes(record_block(dataset.test))
    else:
        raise ValueError(f"unknown variant: {variant!r}")


def split_tasks(dataset: Dataset, n_tasks: int, classes_per_task: int, seed: int = 0) -> TaskSequence:
    """Partition classes into disjoint tasks via a seeded permutation."""
    if n_tasks < 1 or classes_per_task < 1:
        raise ValueError("need at least one task and one class per task")
    needed = n_tasks * classes_per_task
    if needed > dataset.num_classes:
        raise ValueError(
            f"{n_tasks} tasks x {classes_per_task} classes need {needed} classes, "
            f"dataset has {dataset.num_classes}"
        )
    perm = np.random.default_rng(seed).permutation(dataset.num_classes)
    tasks = []
    for t in range(n_tasks):
        cls = tuple(int(c) for c in perm[t * classes_per_task : (t + 1) * classes_per_task])
        tasks.append(
            TaskDescriptor(
                task_id=t + 1,
                class_ids=cls,
                train_idx=np.flatnonzero(np.isin(dataset.train.labels, cls)),
                test_idx=np.flatnonzero(np.isin(dataset.test.labels, cls)),
            )
        )
    return TaskSequence(dataset=dataset, tasks=tasks)


def synthetic_tasks(
    n_tasks: int,
    classes_per_task: int = 2,
    dims: tuple[int, int, int] = (3, 16, 16),
    seed: int = 0,
    separation: float = 3.0,
    noise: float = 1.0,
    train_per_class: int = 100,
    test_per_class: int = 40,
) -> TaskSequence:
    """Fabricate blob-textured classes and split them into tasks.

    Each class is a smoothed random template; images are the template
    scaled by ``separation`` plus white noise scaled by ``noise``. With
    separation 0 every class has the same distribution, so no classifier
    can beat chance; with separation >> noise a linear probe is nearly
    perfect.
    """
    if n_tasks < 1 or classes_per_task < 1:
        raise ValueError("need at least one task and one class per task")
    c, h, w = dims
    n_classes = n_tasks * classes_per_task
    rng = np.random.default_rng(seed)

    sigma = max(1.0, h / 8.0)
    templates = []
    for _ in range(n_classes):
        t = gaussian_filter(rng.standard_normal(dims), sigma=(0, sigma, sigma))
        t /= max(t.std(), 1e-9)
        templates.append(t)

    amplitude = 52.0 / max(float(np.hypot(separation, noise)), 1e-9)

    def draw(per_class: int) -> Split:
        images = np.empty((n_classes * per_class, c, h, w), dtype=np.uint8)
        labels = np.empty(n_classes * per_class, dtype=np.int64)
        row = 0
        for cls in range(n_classes):
            for _ in range(per_class):
                signal = separation * templates[cls] + noise * rng.standard_normal(dims)
                img = np.clip(np.rint(128.0 + amplitude * signal), 0, 255)
                images[row] = img.astype(np.uint8)
                labels[row] = cls
                row += 1
        order = rng.permutation(row)
        return Split(images=images[order], labels=labels[order])

    train, test = draw(train_per_class), draw(test_per_class)
    flat = train.images.reshape(len(train), c, -1).astype(np.float64) / 255.0
    mean = tuple(float(v) for v in flat.mean(axis=(0, 2)))
    std = tuple(float(v) for v in np.maximum(flat.std(axis=(0, 2)), 1e-3))
    names = tuple(f"blob_{i:03d}" for i in range(n_classes))
    dataset = Dataset(train, test, names, mean, std)

    tasks = []
    for t in range(n_tasks):
        cls = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        tasks.append(
            TaskDescriptor(
                task_id=t + 1,
                class_ids=cls,
                train_idx=np.flatnonzero(np.isin(train.labels, cls)),
                test_idx=np.flatnonzero(np.isin(test.labels, cls)),
            )
        )
    return TaskSequence(dataset=dataset, tasks=tasks)


def normalize_images(images: np.ndarray, mean: tuple[float, ...], std: tuple[float, ...],
                     dtype=np.float32) -> np.ndarray:
    """Scale uint8 images to floats with channel-wise standardization."""
    dt = np.dtype(dtype)
    x = images.astype(dt) / dt.type(255.0)
    m = np.asarray(mean, dtype=dt)[None, :, None, None]
    s = np.asarray(std, dtype=dt)[None, :, None, None]
    return (x - m) / s


def local_labels(labels: np.ndarray, class_ids: tuple[int, ...]) -> np.ndarray:
    """Map global class ids onto head indices 0..len(class_ids)-1."""
    lut = {cls: i for i, cls in enumerate(class_ids)}
    out = np.array([lut[int(y)] for y in labels], dtype=np.int64)
    return out


def task_arrays(dataset: Dataset, task: TaskDescriptor, split: str = "train",
                dtype=np.float32, limit: int | None = None,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized images and local labels for one task.

    ``limit`` caps the row count; when an rng is given the subset is a
    seeded random draw, otherwise the first rows.
    """
    part = dataset.train if split == "train" else dataset.test
    idx = task.train_idx if split == "train" else task.test_idx
    if limit is not None and limit < idx.size:
        idx = rng.permutation(idx)[:limit] if rng is not None else idx[:limit]
    x = normalize_images(part.images[idx], dataset.mean, dataset.std, dtype)
    y = local_labels(part.labels[idx], task.class_ids)
    return x, y
