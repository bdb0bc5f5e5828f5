"""Checkpoint files: a text manifest of names and shapes, then raw float64.

Layout:
    tensors <count>\n
    <name> <rank> <dim0> ... <dim_{rank-1}>\n   (one line per tensor)
    end\n
    <little-endian float64 payload, manifest order>

Names may not contain whitespace. Scalars have rank 0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    lines = [f"tensors {len(arrays)}"]
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name) or not name:
            raise CheckpointFormatError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name} {arr.ndim}" + (f" {dims}" if dims else ""))
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    marker = b"end\n"
    split = raw.find(marker)
    if split < 0:
        raise CheckpointFormatError(f"{path}: manifest has no end marker")
    header = raw[:split].decode("utf-8").splitlines()
    body = raw[split + len(marker):]

    if not header or not header[0].startswith("tensors "):
        raise CheckpointFormatError(f"{path}: missing tensor count line")
    count = int(header[0].split()[1])
    if len(header) - 1 != count:
        raise CheckpointFormatError(
            f"{path}: manifest lists {len(header) - 1} tensors, header says {count}"
        )

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for line in header[1:]:
        parts = line.split()
        name, rank = parts[0], int(parts[1])
        shape = tuple(int(d) for d in parts[2 : 2 + rank])
        if len(shape) != rank:
            raise CheckpointFormatError(f"{path}: bad manifest line {line!r}")
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if offset + nbytes > len(body):
            raise CheckpointFormatError(f"{path}: payload truncated at tensor {name!r}")
        arrays[name] = np.frombuffer(body[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - offset} trailing payload bytes")
    return arrays
