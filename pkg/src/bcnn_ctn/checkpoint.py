"""Checkpoint container.

A checkpoint is a zip archive (stored, not compressed) with fixed member
timestamps so identical content gives identical bytes. Members:

``MAGIC``            the ASCII bytes ``BCNN-CTN-CHECKPOINT``
``FORMAT``           the format version integer as ASCII text
``config.json``      backbone configuration
``meta.json``        free-form JSON metadata (epoch, history, rng state, ...)
``param/<name>.npy`` one float64 ``.npy`` array per network parameter
``state/<name>.npy`` optional extra arrays (optimizer slots, similarity matrix)
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, Network
from .tensor import Tensor

MAGIC = b"BCNN-CTN-CHECKPOINT"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _put(zf: zipfile.ZipFile, name: str, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload, compress_type=zipfile.ZIP_STORED)


def _npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, net: Network, meta: dict | None = None,
                    state: dict[str, np.ndarray] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _put(zf, "MAGIC", MAGIC)
        _put(zf, "FORMAT", str(FORMAT_VERSION).encode())
        _put(zf, "config.json", json.dumps(net.config.to_dict(), sort_keys=True).encode())
        _put(zf, "meta.json", json.dumps(meta or {}, sort_keys=True).encode())
        for name, p in net.params.items():
            _put(zf, f"param/{name}.npy", _npy(p.data))
        for name, arr in (state or {}).items():
            _put(zf, f"state/{name}.npy", _npy(np.asarray(arr)))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[Network, dict, dict[str, np.ndarray]]:
    """Returns (network, meta, state arrays)."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as e:
        raise CheckpointError(f"{path}: not a checkpoint ({e})") from e
    with zf:
        names = zf.namelist()
        if "MAGIC" not in names or zf.read("MAGIC") != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version = int(zf.read("FORMAT").decode())
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        config = BackboneConfig.from_dict(json.loads(zf.read("config.json")))
        meta = json.loads(zf.read("meta.json"))
        params, state = {}, {}
        for n in names:
            if n.startswith("param/"):
                key = n[len("param/"):-len(".npy")]
                params[key] = Tensor(np.lib.format.read_array(io.BytesIO(zf.read(n))), name=key)
            elif n.startswith("state/"):
                key = n[len("state/"):-len(".npy")]
                state[key] = np.lib.format.read_array(io.BytesIO(zf.read(n)))
    return Network(config, params), meta, state
