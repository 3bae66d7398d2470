"""Raw tensor files and the named-tensor container used for meshes and checkpoints.

Single tensor file layout (all little-endian)::

    bytes 0-3    magic b"GNT1"
    bytes 4-7    uint32 dtype tag (see DTYPE_TAGS)
    bytes 8-11   uint32 rank
    bytes 12-15  uint32 reserved (0)
    rank x uint64 dims
    row-major payload

Container layout::

    bytes 0-7    magic b"GNCKPT01"
    bytes 8-15   uint64 length of the JSON index
    JSON index   {"tensors": {name: {"dtype", "shape", "offset", "nbytes"}}, "meta": {...}}
    payload      concatenated raw tensors, offsets relative to payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"GNT1"
CONTAINER_MAGIC = b"GNCKPT01"

DTYPE_TAGS = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<u4"),
    4: np.dtype("<i4"),
    5: np.dtype("<i8"),
    6: np.dtype("u1"),
}
_NAME_OF = {1: "f4", 2: "f8", 3: "u4", 4: "i4", 5: "i8", 6: "u1"}
_TAG_OF_NAME = {v: k for k, v in _NAME_OF.items()}


class TensorFormatError(ValueError):
    pass


def _tag(arr: np.ndarray) -> int:
    if arr.dtype == np.bool_:
        return 6
    for tag, dt in DTYPE_TAGS.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return tag
    raise TensorFormatError(f"unsupported dtype {arr.dtype}")


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = _tag(arr)
    data = np.asarray(arr, dtype=DTYPE_TAGS[tag], order="C")  # keeps rank 0
    header = TENSOR_MAGIC + struct.pack("<III", tag, data.ndim, 0)
    dims = struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + dims + data.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != TENSOR_MAGIC:
        raise TensorFormatError("bad tensor magic")
    tag, rank, _ = struct.unpack("<III", buf[4:16])
    if tag not in DTYPE_TAGS:
        raise TensorFormatError(f"unknown dtype tag {tag}")
    dims = struct.unpack(f"<{rank}Q", buf[16 : 16 + 8 * rank])
    dt = DTYPE_TAGS[tag]
    start = 16 + 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - start != count * dt.itemsize:
        raise TensorFormatError("payload size does not match header dims")
    return np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(dims).copy()


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(arr))
    except OSError as exc:
        raise OSError(f"failed to write tensor file {path}: {exc}") from exc


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read tensor file {path}: {exc}") from exc
    try:
        return decode_tensor(buf)
    except TensorFormatError as exc:
        raise TensorFormatError(f"{path}: {exc}") from exc


def save_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays into one file; names keep insertion order."""
    index = {}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = _tag(arr)
        raw = np.asarray(arr, dtype=DTYPE_TAGS[tag]).tobytes(order="C")
        index[name] = {"dtype": _NAME_OF[tag], "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=False).encode("utf-8")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(CONTAINER_MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            for c in chunks:
                fh.write(c)
    except OSError as exc:
        raise OSError(f"failed to write container {path}: {exc}") from exc


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read container {path}: {exc}") from exc
    if buf[:8] != CONTAINER_MAGIC:
        raise TensorFormatError(f"{path}: bad container magic")
    (n,) = struct.unpack("<Q", buf[8:16])
    head = json.loads(buf[16 : 16 + n].decode("utf-8"))
    base = 16 + n
    out = {}
    for name, ent in head["tensors"].items():
        dt = DTYPE_TAGS[_TAG_OF_NAME[ent["dtype"]]]
        count = ent["nbytes"] // dt.itemsize
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=base + ent["offset"])
        out[name] = arr.reshape(ent["shape"]).copy()
    return out, head.get("meta", {})
