"""Flat named-tensor checkpoint container.

Binary layout (all integers little-endian):

    magic   4 bytes  b"NTC1"
    count   uint32   number of tensors
    then per tensor, sorted by name:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        shape     ndim x uint32
        data      prod(shape) x float32, row-major

Values are stored as 32-bit floats regardless of in-memory dtype, so the
format is reloadable from any language with a binary reader.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"NTC1"


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContractError(f"{path}: not a tensor container (bad magic)")
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        tensors[name] = arr.astype(np.float64)
    if offset != len(data):
        raise ContractError(f"{path}: trailing bytes after last tensor")
    return tensors


def save_agents(path, agent_params: list[dict[str, np.ndarray]]) -> None:
    """All agents' parameters in one container, names prefixed agent{i}."""
    merged = {}
    for i, params in enumerate(agent_params):
        for name, arr in params.items():
            merged[f"agent{i}.{name}"] = arr
    save_tensors(path, merged)


def load_agents(path) -> list[dict[str, np.ndarray]]:
    tensors = load_tensors(path)
    agents: dict[int, dict[str, np.ndarray]] = {}
    for full_name, arr in tensors.items():
        prefix, _, name = full_name.partition(".")
        if not prefix.startswith("agent") or not name:
            raise ContractError(f"unexpected tensor name {full_name!r} in checkpoint")
        agents.setdefault(int(prefix[5:]), {})[name] = arr
    if sorted(agents) != list(range(len(agents))):
        raise ContractError("checkpoint must contain agents 0..N-1")
    return [agents[i] for i in range(len(agents))]
