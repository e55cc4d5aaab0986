"""Binary checkpoint files.

Layout::

    POLYSEQ-CKPT-1\\n
    manifest <n>\\n
    <n bytes of UTF-8 manifest text>
    <raw little-endian tensor bytes>

The manifest has one ``meta <json>`` line followed by one line per tensor:
``tensor <name> <dtype> <d0xd1x...> <offset> <nbytes>``, offsets relative to
the start of the data section.  Optimizer moments are stored as tensors named
``optim.m.<param>`` / ``optim.v.<param>``; the optimizer step lives in meta.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from polyseq.errors import CheckpointError
from polyseq.io import atomic_write

MAGIC = b"POLYSEQ-CKPT-1\n"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("optim.")}

    def optimizer_moments(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        m = {k[len("optim.m."):]: v for k, v in self.tensors.items() if k.startswith("optim.m.")}
        v = {k[len("optim.v."):]: a for k, a in self.tensors.items() if k.startswith("optim.v.")}
        return m, v


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    lines = ["meta " + json.dumps(ckpt.meta, sort_keys=True)]
    blobs = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name may not contain whitespace: {name!r}")
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_NAMES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"tensor {name} {_DTYPE_NAMES[dt]} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with atomic_write(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"manifest {len(manifest)}\n".encode("ascii"))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a POLYSEQ-CKPT-1 file")
    pos = len(MAGIC)
    header_end = data.index(b"\n", pos)
    key, _, size = data[pos:header_end].decode("ascii").partition(" ")
    if key != "manifest":
        raise CheckpointError(f"{path}: malformed manifest header")
    start = header_end + 1
    manifest = data[start : start + int(size)].decode("utf-8")
    body = memoryview(data)[start + int(size) :]
    meta: dict = {}
    tensors: dict[str, np.ndarray] = {}
    for line in manifest.splitlines():
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, dtype, shape, offset, nbytes = rest.split(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            off, n = int(offset), int(nbytes)
            if off + n > len(body):
                raise CheckpointError(f"{path}: truncated data for '{name}'")
            arr = np.frombuffer(body[off : off + n], dtype=_DTYPES[dtype]).reshape(dims)
            tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        elif line.strip():
            raise CheckpointError(f"{path}: unknown manifest line {line[:40]!r}")
    return Checkpoint(meta, tensors)
