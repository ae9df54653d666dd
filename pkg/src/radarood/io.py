"""Binary tensor container, dataset manifests, checkpoints, and reports.

Tensor files are little-endian and fixed-width:

    magic "MCRD" | version u32 | rank u32 | dims u32 x rank | dtype tag u32 | payload

with payload row-major.  Dataset directories hold one tensor file per scene plus
a JSON manifest carrying scenario labels, splits, and provenance.  Checkpoints
reuse the same framing as a block stream (tensors keyed by layer path plus JSON
blocks for model config, thresholds, and the training log).  All writes go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .detector import Thresholds
from .errors import DataError
from .model import ModelConfig, MultiDecoderModel

MAGIC = b"MCRD"
FORMAT_VERSION = 1

DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}

_BLOCK_TENSOR = 1
_BLOCK_JSON = 2

MANIFEST_NAME = "manifest.json"


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config for report provenance."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _atomic_write(path: Path, write_fn) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tensor_bytes(array: np.ndarray) -> bytes:
    dtype = np.dtype(array.dtype).newbyteorder("<")
    base = np.dtype(array.dtype.type)
    if base not in _TAG_FOR_KIND:
        raise DataError(f"unsupported tensor dtype {array.dtype}")
    tag = _TAG_FOR_KIND[base]
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<I", tag)
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes()


def _parse_tensor(buf: memoryview, path: str) -> tuple[np.ndarray, int]:
    if bytes(buf[:4]) != MAGIC:
        raise DataError(f"{path}: bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    offset = 12 + 4 * rank
    (tag,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if tag not in DTYPE_TAGS:
        raise DataError(f"{path}: unknown dtype tag {tag}")
    dtype = DTYPE_TAGS[tag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise DataError(
            f"{path}: payload truncated ({len(buf) - offset} bytes, expected {nbytes})"
        )
    arr = np.frombuffer(buf[offset : offset + nbytes], dtype=dtype).reshape(dims)
    return arr, offset + nbytes


def write_tensor(path, array: np.ndarray) -> None:
    """Write one tensor file (datasets use float32)."""
    data = _tensor_bytes(array)
    try:
        _atomic_write(Path(path), lambda fh: fh.write(data))
    except OSError as e:
        raise DataError(f"failed writing tensor {path}: {e}") from e


def read_tensor(path, mmap: bool = False) -> np.ndarray:
    """Read one tensor file; ``mmap=True`` maps the payload read-only."""
    path = Path(path)
    try:
        raw = path.read_bytes() if not mmap else None
    except OSError as e:
        raise DataError(f"failed reading tensor {path}: {e}") from e
    if not mmap:
        arr, end = _parse_tensor(memoryview(raw), str(path))
        if end != len(raw):
            raise DataError(f"{path}: {len(raw) - end} trailing bytes")
        return arr.copy()
    with open(path, "rb") as fh:
        head = fh.read(12)
        if head[:4] != MAGIC:
            raise DataError(f"{path}: bad magic")
        version, rank = struct.unpack("<II", head[4:])
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {version}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        (tag,) = struct.unpack("<I", fh.read(4))
        offset = fh.tell()
    return np.memmap(path, dtype=DTYPE_TAGS[tag], mode="r", offset=offset, shape=dims)


# -- dataset directories -----------------------------------------------------


def write_manifest(dataset_dir, manifest: dict) -> None:
    write_json(Path(dataset_dir) / MANIFEST_NAME, manifest)


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise DataError(f"failed reading manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {path} is not valid JSON: {e}") from e


def scene_path(dataset_dir, entry: dict) -> Path:
    return Path(dataset_dir) / entry["file"]


def load_scene(dataset_dir, entry: dict, mmap: bool = False) -> np.ndarray:
    return read_tensor(scene_path(dataset_dir, entry), mmap=mmap)


# -- reports and configs -----------------------------------------------------


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    try:
        _atomic_write(Path(path), lambda fh: fh.write(text.encode()))
    except OSError as e:
        raise DataError(f"failed writing {path}: {e}") from e


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise DataError(f"failed reading {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e


# -- checkpoints ---------------------------------------------------------------


def _pack_block(name: str, kind: int, payload: bytes) -> bytes:
    name_b = name.encode()
    return struct.pack("<I", len(name_b)) + name_b + struct.pack("<II", kind, len(payload)) + payload


def save_checkpoint(path, model: MultiDecoderModel, thresholds: Thresholds | None = None,
                    meta: dict | None = None) -> None:
    """Persist model parameters, batch-norm buffers, thresholds, and metadata."""
    blocks = []
    head = {
        "model_config": model.config.to_dict(),
        "epoch": model.epoch,
        "loss_history": list(model.loss_history),
        "thresholds": thresholds.to_dict() if thresholds is not None else None,
        "meta": meta or {},
    }
    blocks.append(_pack_block("meta", _BLOCK_JSON, json.dumps(head, sort_keys=True).encode()))
    for name, p in model.named_params():
        blocks.append(_pack_block(f"param:{name}", _BLOCK_TENSOR, _tensor_bytes(p.data)))
    for name, b in model.named_buffers():
        blocks.append(_pack_block(f"buffer:{name}", _BLOCK_TENSOR, _tensor_bytes(b)))

    def write(fh):
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(blocks)))
        for blk in blocks:
            fh.write(blk)

    try:
        _atomic_write(Path(path), write)
    except OSError as e:
        raise DataError(f"failed writing checkpoint {path}: {e}") from e


def load_checkpoint(path) -> tuple[MultiDecoderModel, Thresholds | None, dict]:
    """Rebuild a model from a checkpoint; returns (model, thresholds, meta)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"failed reading checkpoint {path}: {e}") from e
    buf = memoryview(raw)
    if bytes(buf[:4]) != MAGIC:
        raise DataError(f"{path}: bad magic")
    version, n_blocks = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    offset = 12
    head = None
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = bytes(buf[offset : offset + name_len]).decode()
        offset += name_len
        kind, payload_len = struct.unpack_from("<II", buf, offset)
        offset += 8
        payload = buf[offset : offset + payload_len]
        offset += payload_len
        if kind == _BLOCK_JSON:
            if name == "meta":
                head = json.loads(bytes(payload))
        elif kind == _BLOCK_TENSOR:
            arr, _ = _parse_tensor(payload, f"{path}#{name}")
            if name.startswith("param:"):
                params[name[len("param:"):]] = arr.copy()
            elif name.startswith("buffer:"):
                buffers[name[len("buffer:"):]] = arr.copy()
        else:
            raise DataError(f"{path}: unknown block kind {kind} for {name!r}")
    if head is None:
        raise DataError(f"{path}: checkpoint is missing its meta block")

    model = MultiDecoderModel(ModelConfig.from_dict(head["model_config"]))
    model.load_arrays(params, buffers)
    model.epoch = int(head.get("epoch", 0))
    model.loss_history = list(head.get("loss_history", []))
    thresholds = None
    if head.get("thresholds") is not None:
        thresholds = Thresholds.from_dict(head["thresholds"])
    return model, thresholds, head.get("meta", {})
