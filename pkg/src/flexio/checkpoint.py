"""Checkpoint directory format.

``manifest.json``  ordered list of ``{name, shape, dtype, byte_offset}``
``weights.bin``    little-endian float32 tensors concatenated in manifest order
``config.json``    the full :class:`~flexio.model.ModelConfig`
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError
from .model import FlexIO, ModelConfig

_LE_F32 = np.dtype("<f4")


def save_checkpoint(model: FlexIO, path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(out / "weights.bin", "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype(_LE_F32))
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "byte_offset": offset})
            offset += arr.nbytes
    (out / "manifest.json").write_text(json.dumps(entries, indent=1) + "\n")
    (out / "config.json").write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_config(path) -> ModelConfig:
    return ModelConfig.from_dict(json.loads((Path(path) / "config.json").read_text()))


def load_checkpoint(path) -> FlexIO:
    src = Path(path)
    if not (src / "manifest.json").is_file():
        raise ConfigError(f"{src} is not a checkpoint directory (manifest.json missing)")
    model = FlexIO(load_config(src))
    blob = (src / "weights.bin").read_bytes()
    expected = model.state_dict()
    state = {}
    for entry in json.loads((src / "manifest.json").read_text()):
        if entry["dtype"] != "f32":
            raise ConfigError(f"unsupported dtype {entry['dtype']!r} for {entry['name']}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if entry["byte_offset"] + count * _LE_F32.itemsize > len(blob):
            raise DataError(f"weights.bin is truncated at {entry['name']}")
        arr = np.frombuffer(blob, _LE_F32, count, entry["byte_offset"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    missing = sorted(set(expected) - set(state))
    if missing:
        raise ConfigError(f"checkpoint is missing parameters: {missing[:5]}")
    model.load_state_dict(state)
    return model
