"""Versioned checkpoint container: JSON header plus raw little-endian arrays.

The byte layout is fully determined by its contents (no timestamps), so two
identical training runs produce identical files.  Loading validates the
format version, array shapes against the stored config, and the vocabulary
against the embedding table.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError
from .network import ModelConfig, ModelParams, config_hash, param_shapes
from .optim import AdamWState
from .vocab import Vocab

MAGIC = b"MWPRNK01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    meta: dict
    opt_state: AdamWState | None = None


def save_checkpoint(
    path,
    params: ModelParams,
    meta: dict | None = None,
    opt_state: AdamWState | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = dict(params.arrays)
    header_meta = dict(meta or {})
    if opt_state is not None:
        header_meta["optimizer_step"] = opt_state.step
        for name, arr in opt_state.m.items():
            arrays[f"optim.m.{name}"] = arr
        for name, arr in opt_state.v.items():
            arrays[f"optim.v.{name}"] = arr

    header = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "config_hash": params.hash(),
        "vocab": list(params.vocab.tokens),
        "meta": header_meta,
        "arrays": [
            {"name": name, "shape": list(arr.shape), "dtype": "float64"}
            for name, arr in arrays.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {header.get('format_version')}")
        config = ModelConfig(**header["config"])
        vocab = Vocab(tuple(header["vocab"]))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"truncated data for array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    expected = param_shapes(config, len(vocab))
    param_arrays = {n: a for n, a in arrays.items() if not n.startswith("optim.")}
    if set(param_arrays) != set(expected):
        raise CheckpointError("checkpoint parameter names do not match its config")
    for name, shape in expected.items():
        if param_arrays[name].shape != shape:
            raise CheckpointError(
                f"array {name} has shape {param_arrays[name].shape}, config implies {shape}"
            )
    if header["config_hash"] != config_hash(config, vocab.tokens):
        raise CheckpointError("config hash does not match config and vocabulary")
    params = ModelParams(config, vocab, param_arrays)

    opt_state = None
    optim_m = {n[len("optim.m.") :]: a for n, a in arrays.items() if n.startswith("optim.m.")}
    optim_v = {n[len("optim.v.") :]: a for n, a in arrays.items() if n.startswith("optim.v.")}
    if optim_m or optim_v:
        if set(optim_m) != set(expected) or set(optim_v) != set(expected):
            raise CheckpointError("optimizer state does not cover all parameters")
        opt_state = AdamWState(int(header["meta"]["optimizer_step"]), optim_m, optim_v)
    return Checkpoint(params, dict(header.get("meta", {})), opt_state)
