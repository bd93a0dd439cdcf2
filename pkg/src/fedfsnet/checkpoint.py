"""Flat binary checkpoints of the global and hidden models.

Layout (little-endian): 16-byte header of magic ``FFSN``, uint32 version and
the first 8 bytes of a SHA-256 over both layer-size tuples; then for each of
global and hidden a uint64 count followed by that many float64 values.  An
absent hidden model is stored with count 0.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from . import nn
from .errors import FormatError

MAGIC = b"FFSN"
VERSION = 1


def spec_hash(global_spec: nn.ModelSpec, hidden_spec: nn.ModelSpec | None) -> bytes:
    text = repr((global_spec.layer_sizes, global_spec.output,
                 None if hidden_spec is None else (hidden_spec.layer_sizes, hidden_spec.output)))
    return hashlib.sha256(text.encode()).digest()[:8]


def write_checkpoint(path, global_params: nn.ModelParams,
                     hidden_params: nn.ModelParams | None = None) -> None:
    hspec = None if hidden_params is None else hidden_params.spec
    g = global_params.flat().astype("<f8")
    h = np.zeros(0, "<f8") if hidden_params is None else hidden_params.flat().astype("<f8")
    with open(Path(path), "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION) + spec_hash(global_params.spec, hspec))
        for arr in (g, h):
            f.write(struct.pack("<Q", arr.size))
            f.write(arr.tobytes())


def read_checkpoint(path, global_spec: nn.ModelSpec, hidden_spec: nn.ModelSpec | None = None
                    ) -> tuple[nn.ModelParams, nn.ModelParams | None]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 16
    arrays = []
    for _ in range(2):
        (count,) = struct.unpack("<Q", raw[pos:pos + 8])
        pos += 8
        arrays.append(np.frombuffer(raw[pos:pos + 8 * count], dtype="<f8").astype(np.float64))
        pos += 8 * count
    if arrays[1].size == 0:
        hidden_spec = None
    if raw[8:16] != spec_hash(global_spec, hidden_spec):
        raise FormatError(f"{path}: model specs do not match checkpoint")
    glob = nn.ModelParams.from_flat(global_spec, arrays[0])
    hidden = None if hidden_spec is None else nn.ModelParams.from_flat(hidden_spec, arrays[1])
    return glob, hidden
