"""Byte-stable checkpoint container.

Layout (all integers little-endian)::

    b"ZLCK" | u32 version | u32 len | config JSON (sorted keys)
    u32 section count
    per section: u8 len | tag | u32 entry count
        per entry: u16 len | name | u8 dtype (0 = f32, 1 = i32) | u8 ndim | u32 dims... | values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"ZLCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<i4"}


def _as_numpy(v) -> np.ndarray:
    if isinstance(v, torch.Tensor):
        v = v.detach().cpu().numpy()
    return np.asarray(v)


def dumps(config: dict, sections: dict[str, dict]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode()
    out += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(sections))]
    for tag in sorted(sections):
        entries = sections[tag]
        tb = tag.encode()
        out += [struct.pack("<B", len(tb)), tb, struct.pack("<I", len(entries))]
        for name in sorted(entries):
            arr = _as_numpy(entries[name])
            code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
            nb = name.encode()
            out += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", code, arr.ndim)]
            out += [struct.pack("<I", d) for d in arr.shape]
            out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def loads(data: bytes) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        return _parse(data)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _parse(data: bytes):
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (n,) = take("<I")
    config = json.loads(data[pos:pos + n].decode())
    pos += n
    sections: dict[str, dict[str, np.ndarray]] = {}
    (n_sec,) = take("<I")
    for _ in range(n_sec):
        (ln,) = take("<B")
        tag = data[pos:pos + ln].decode()
        pos += ln
        (n_ent,) = take("<I")
        entries = {}
        for _ in range(n_ent):
            (ln,) = take("<H")
            name = data[pos:pos + ln].decode()
            pos += ln
            code, ndim = take("<BB")
            shape = take("<" + "I" * ndim) if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype=_DTYPES[code], count=count, offset=pos).reshape(shape)
            pos += count * 4
            entries[name] = arr.astype(np.float32 if code == 0 else np.int32)
        sections[tag] = entries
    if pos != len(data):
        raise CheckpointError("trailing bytes after last section")
    return config, sections


def save(path: str | Path, config: dict, sections: dict[str, dict]) -> None:
    Path(path).write_bytes(dumps(config, sections))


def load(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    return loads(Path(path).read_bytes())
