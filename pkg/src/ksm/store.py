"""Binary artifact files.

Mask file layout (all integers little-endian):

    magic  b"KSM1"
    version   u16
    k, tau, temperature   3 x f64
    layer_count   u32
    per layer:
        layer_id  u32
        d0, d1    2 x u32      rows and columns of the bit matrix
        bits      ceil(d0*d1 / 8) bytes, row-major, most significant
                  bit first, padded to a byte boundary
        scales    one f32 per zero bit, in ascending flat-index order

Element-wise masks store their trailing dimensions flattened into d1;
the kernel size lives in the companion section so shapes reconstruct.
A full task artifact appends a companion section (magic b"KSMX"): a
JSON metadata block plus raw tensors for the head, per-task norms and
the resumable real masks. Checkpoints (magic b"KSMC") carry the frozen
backbone with a SHA-256 trailer that is verified on load. All writes
go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .masks import MaskHyperparams
from .model import Backbone, BackboneConfig, KernelMaskSet, NormArrays, TaskArtifact

MASK_MAGIC = b"KSM1"
COMPANION_MAGIC = b"KSMX"
CHECKPOINT_MAGIC = b"KSMC"
VERSION = 1

_HEADER = struct.Struct("<4sHdddI")  # magic, version, k, tau, T, layer_count
_LAYER = struct.Struct("<III")  # layer_id, d0, d1
_U32 = struct.Struct("<I")

_DTYPE_CODES = {"float32": 0, "float64": 1, "uint8": 2, "int64": 3}
_CODE_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_CODES.items()}


class StoreError(Exception):
    """Base class for artifact file problems."""


class MagicError(StoreError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(StoreError):
    """The file ends before its declared contents."""


class CountMismatchError(StoreError):
    """Declared and actual element counts disagree."""


class HashMismatchError(StoreError):
    """Stored and recomputed content hashes differ."""


def _atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES[str(arr.dtype)]
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    dims = b"".join(_U32.pack(d) for d in arr.shape)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return head + dims + arr.tobytes()


def _unpack_tensor(r: _Reader) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", r.take(2))
    name = r.take(nlen).decode()
    code, ndim = struct.unpack("<BB", r.take(2))
    if code not in _CODE_DTYPES:
        raise CountMismatchError(f"unknown dtype code {code}")
    shape = tuple(r.u32() for _ in range(ndim))
    dt = _CODE_DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape)
    return name, data.copy()


def mask_layer_bytes(bits: np.ndarray, scales: np.ndarray, layer_id: int) -> bytes:
    """Serialize one layer; bits beyond 2-D are flattened into the columns."""
    flat = bits.reshape(bits.shape[0], -1).astype(np.uint8)
    d0, d1 = flat.shape
    packed = np.packbits(flat, axis=None)
    zero_pos = np.flatnonzero(flat.ravel() == 0)
    svals = np.ascontiguousarray(scales.reshape(-1)[zero_pos], dtype="<f4")
    return _LAYER.pack(layer_id, d0, d1) + packed.tobytes() + svals.tobytes()


def mask_to_bytes(artifact: TaskArtifact, include_companion: bool = True) -> bytes:
    """Serialize a task artifact; masks always, the companion on request."""
    hp = artifact.hyper
    out = bytearray()
    out += _HEADER.pack(MASK_MAGIC, VERSION, hp.k, hp.tau, hp.temperature, len(artifact.bits))
    for lid in sorted(artifact.bits):
        out += mask_layer_bytes(artifact.bits[lid], artifact.scales[lid], lid)
    if include_companion and artifact.head_w is not None:
        out += _companion_bytes(artifact)
    return bytes(out)


def _companion_bytes(artifact: TaskArtifact) -> bytes:
    meta = {
        "task_id": artifact.task_id,
        "class_ids": list(artifact.class_ids),
        "strategy": artifact.strategy_name,
        "backbone_hash": artifact.backbone_hash,
        "init_value": artifact.hyper.init_value,
        "gumbel": artifact.hyper.gumbel,
        "kernel_sizes": {str(k): list(v) for k, v in sorted(artifact.kernel_sizes.items())},
        "norm_layers": sorted(artifact.norms),
        "real_mask_layers": sorted(artifact.real_masks.masks) if artifact.real_masks else [],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    tensors: list[bytes] = [
        _pack_tensor("head_w", artifact.head_w),
        _pack_tensor("head_b", artifact.head_b),
    ]
    for lid in sorted(artifact.norms):
        na = artifact.norms[lid]
        tensors.append(_pack_tensor(f"norm{lid}_gamma", na.gamma))
        tensors.append(_pack_tensor(f"norm{lid}_beta", na.beta))
        tensors.append(_pack_tensor(f"norm{lid}_mean", na.running_mean))
        tensors.append(_pack_tensor(f"norm{lid}_var", na.running_var))
    if artifact.real_masks is not None:
        for lid in sorted(artifact.real_masks.masks):
            tensors.append(_pack_tensor(f"real{lid}", artifact.real_masks.masks[lid]))
    out = bytearray()
    out += COMPANION_MAGIC
    out += _U32.pack(len(blob))
    out += blob
    out += _U32.pack(len(tensors))
    for t in tensors:
        out += t
    return bytes(out)


def mask_from_bytes(buf: bytes) -> TaskArtifact:
    r = _Reader(buf)
    magic, version, k, tau, temperature, layer_count = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MASK_MAGIC:
        raise MagicError(f"bad magic: {magic!r}")
    if version != VERSION:
        raise CountMismatchError(f"unsupported version {version}")

    bits: dict[int, np.ndarray] = {}
    scales: dict[int, np.ndarray] = {}
    for _ in range(layer_count):
        layer_id, d0, d1 = _LAYER.unpack(r.take(_LAYER.size))
        if layer_id in bits:
            raise CountMismatchError(f"duplicate layer id {layer_id}")
        n = d0 * d1
        packed = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
        flat = np.unpackbits(packed)[:n]
        zero_pos = np.flatnonzero(flat == 0)
        svals = np.frombuffer(r.take(4 * zero_pos.size), dtype="<f4")
        scale = np.zeros(n, dtype=np.float32)
        scale[zero_pos] = svals
        bits[layer_id] = flat.reshape(d0, d1).copy()
        scales[layer_id] = scale.reshape(d0, d1)

    hyper_kwargs = {"k": k, "tau": tau, "temperature": temperature}
    artifact = TaskArtifact(
        task_id=0,
        class_ids=(),
        strategy_name="ksm",
        hyper=MaskHyperparams(**hyper_kwargs),
        bits=bits,
        scales=scales,
    )

    if r.remaining == 0:
        return artifact
    marker = r.take(4)
    if marker != COMPANION_MAGIC:
        raise CountMismatchError(f"unexpected trailing bytes starting {marker!r}")
    _read_companion(r, artifact, hyper_kwargs)
    if r.remaining:
        raise CountMismatchError(f"{r.remaining} unread bytes after the companion")
    return artifact


def _read_companion(r: _Reader, artifact: TaskArtifact, hyper_kwargs: dict) -> None:
    meta = json.loads(r.take(r.u32()).decode())
    count = r.u32()
    tensors = dict(_unpack_tensor(r) for _ in range(count))

    artifact.task_id = int(meta["task_id"])
    artifact.class_ids = tuple(int(c) for c in meta["class_ids"])
    artifact.strategy_name = meta["strategy"]
    artifact.backbone_hash = meta["backbone_hash"]
    artifact.hyper = MaskHyperparams(
        init_value=float(meta["init_value"]), gumbel=bool(meta["gumbel"]), **hyper_kwargs
    )
    artifact.kernel_sizes = {int(k): tuple(v) for k, v in meta["kernel_sizes"].items()}
    artifact.head_w = tensors["head_w"]
    artifact.head_b = tensors["head_b"]
    artifact.norms = {
        lid: NormArrays(
            gamma=tensors[f"norm{lid}_gamma"],
            beta=tensors[f"norm{lid}_beta"],
            running_mean=tensors[f"norm{lid}_mean"],
            running_var=tensors[f"norm{lid}_var"],
        )
        for lid in meta["norm_layers"]
    }
    if meta["real_mask_layers"]:
        artifact.real_masks = KernelMaskSet(
            masks={lid: tensors[f"real{lid}"] for lid in meta["real_mask_layers"]},
            hyper=artifact.hyper,
        )
    # element-wise bits were stored flattened; restore kernel dims
    from .strategies import STRATEGIES

    spec = STRATEGIES.get(artifact.strategy_name)
    if spec is not None and not spec.finetune and spec.granularity == "element":
        for lid, (kh, kw) in artifact.kernel_sizes.items():
            if lid in artifact.bits and kh * kw > 1:
                d0, d1 = artifact.bits[lid].shape
                if d1 % (kh * kw):
                    raise CountMismatchError(
                        f"layer {lid}: columns {d1} not divisible by kernel {kh}x{kw}"
                    )
                ci = d1 // (kh * kw)
                artifact.bits[lid] = artifact.bits[lid].reshape(d0, ci, kh, kw)
                artifact.scales[lid] = artifact.scales[lid].reshape(d0, ci, kh, kw)


def save_mask(artifact: TaskArtifact, path: str | os.PathLike,
              include_companion: bool = True) -> None:
    _atomic_write(path, mask_to_bytes(artifact, include_companion))


def load_mask(path: str | os.PathLike) -> TaskArtifact:
    return mask_from_bytes(Path(path).read_bytes())


def checkpoint_to_bytes(backbone: Backbone) -> bytes:
    meta = {"config": backbone.config.to_json(), "frozen": backbone.frozen}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<H", VERSION)
    out += _U32.pack(len(blob))
    out += blob
    names = sorted(backbone.weights)
    out += _U32.pack(len(names))
    for name in names:
        out += _pack_tensor(name, backbone.weights[name].data)
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def checkpoint_from_bytes(buf: bytes) -> Backbone:
    if len(buf) < 32 + 10:
        raise TruncatedError(f"checkpoint too short: {len(buf)} bytes")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise MagicError(f"bad magic: {buf[:4]!r}")
    body, trailer = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise HashMismatchError("checkpoint content hash does not verify")
    r = _Reader(body)
    r.take(4)
    (version,) = struct.unpack("<H", r.take(2))
    if version != VERSION:
        raise CountMismatchError(f"unsupported version {version}")
    meta = json.loads(r.take(r.u32()).decode())
    config = BackboneConfig.from_json(meta["config"])
    count = r.u32()
    from .engine import Tensor  # local import avoids a cycle at module load

    weights = {}
    for _ in range(count):
        name, arr = _unpack_tensor(r)
        weights[name] = Tensor(arr, requires_grad=False, dtype=arr.dtype)
    if r.remaining:
        raise CountMismatchError(f"{r.remaining} unread bytes in checkpoint")
    return Backbone(config, weights, frozen=bool(meta["frozen"]))


def save_checkpoint(backbone: Backbone, path: str | os.PathLike) -> None:
    _atomic_write(path, checkpoint_to_bytes(backbone))


def load_checkpoint(path: str | os.PathLike) -> Backbone:
    return checkpoint_from_bytes(Path(path).read_bytes())


def mask_file_size(layer_dims: list[tuple[int, int, int]]) -> int:
    """Expected mask-only file size from (d0, d1, zero_count) per layer."""
    total = _HEADER.size
    for d0, d1, zeros in layer_dims:
        total += _LAYER.size + (d0 * d1 + 7) // 8 + 4 * zeros
    return total
