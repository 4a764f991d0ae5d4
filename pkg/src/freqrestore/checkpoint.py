"""Checkpoint files.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header,
then every parameter as little-endian float64 in header order. The header
holds ``{"format", "version", "config", "params": [{"name", "shape"}...]}``.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ContractError

FORMAT = "freqrestore-checkpoint"
VERSION = 1


def save(path: str | os.PathLike, params: dict[str, np.ndarray], config: dict | None = None) -> None:
    entries = [{"name": n, "shape": list(np.shape(a))} for n, a in params.items()]
    header = json.dumps({"format": FORMAT, "version": VERSION, "config": config or {},
                         "params": entries}).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in params.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Return (parameters by name, config)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ContractError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack_from("<Q", raw, 0)
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractError(f"{path}: unreadable checkpoint header") from exc
    if header.get("format") != FORMAT:
        raise ContractError(f"{path}: not a {FORMAT} file")
    offset = 8 + n
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + 8 * count > len(raw):
            raise ContractError(f"{path}: truncated parameter data")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise ContractError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header.get("config", {})


def split_prefix(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Sub-dictionary of entries under ``prefix.`` with the prefix removed."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}
