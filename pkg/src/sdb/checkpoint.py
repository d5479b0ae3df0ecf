"""Checkpoint files: a numpy ``.npz`` archive of every parameter and buffer plus
a JSON header with the format version, model config, modes, tensor names,
shapes, dtypes and a SHA-256 over the raw tensor bytes."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .core import ModelConfig, SDBError

FORMAT_VERSION = 1


class ChecksumMismatch(SDBError):
    pass


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(model, path: str | Path) -> None:
    arrays = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
    header = {
        "version": FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.cfg),
        "dem_mode": model.dem_mode,
        "ssm_mode": model.ssm_mode,
        "tensors": {k: {"shape": list(a.shape), "dtype": str(a.dtype)} for k, a in arrays.items()},
        "sha256": _digest(arrays),
    }
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__header__"}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise ChecksumMismatch(f"unreadable checkpoint {path}: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ChecksumMismatch(f"unsupported checkpoint version {header.get('version')}")
    if _digest(arrays) != header["sha256"]:
        raise ChecksumMismatch(f"checksum mismatch in {path}")
    for name, meta in header["tensors"].items():
        if name not in arrays or list(arrays[name].shape) != meta["shape"]:
            raise ChecksumMismatch(f"tensor {name} missing or mis-shaped")
    return header, arrays


def load_checkpoint(path: str | Path):
    from .model import SDBPolicy

    header, arrays = read_checkpoint(path)
    cfg = ModelConfig(**header["model_config"])
    model = SDBPolicy(cfg, header["dem_mode"], header["ssm_mode"])
    model = model.to(torch.float64 if arrays["theta_m"].dtype == np.float64 else torch.float32)
    model.load_state_dict({k: torch.from_numpy(np.array(a)) for k, a in arrays.items()})
    return model


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
