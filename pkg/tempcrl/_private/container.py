from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError

MAGIC = b"TCRL"
FORMAT_VERSION = 1


def write_container(path: str | Path, header: dict[str, Any], arrays: list[tuple[str, np.ndarray]]) -> None:
    """
    Write JSON header followed by a little-endian float64 blob.

    Layout: magic, format version (uint32), header length (uint64), header,
    blob. Array names and shapes are stored in the header in blob order.
    """
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays]
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """
    Read a file written by :func:`write_container`.

    :raises CheckpointError: If the file is not a container, has another
        format version or is truncated.
    :return: Header and arrays by name, in blob order.
    :rtype: tuple[dict[str, Any], dict[str, np.ndarray]]
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Unable to read {path}: {e}") from e

    prefix = len(MAGIC) + struct.calcsize("<IQ")
    if len(data) < prefix or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a tempcrl checkpoint")

    version, length = struct.unpack("<IQ", data[len(MAGIC) : prefix])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")

    if len(data) < prefix + length:
        raise CheckpointError(f"{path} is truncated (header)")

    try:
        header = json.loads(data[prefix : prefix + length].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{path} has a corrupted header: {e}") from e

    blob = data[prefix + length :]
    specs = header.pop("arrays", [])
    expected = sum(int(np.prod(spec["shape"], dtype=np.int64)) for spec in specs) * 8
    if len(blob) != expected:
        raise CheckpointError(f"{path} is truncated: blob has {len(blob)} bytes, expected {expected}")

    values = np.frombuffer(blob, dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for spec in specs:
        size = int(np.prod(spec["shape"], dtype=np.int64))
        arrays[spec["name"]] = values[offset : offset + size].reshape(spec["shape"]).astype(np.float64)
        offset += size

    return header, arrays
