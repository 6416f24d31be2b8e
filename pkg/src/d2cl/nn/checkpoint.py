"""Checkpoints: a JSON manifest plus one little-endian float32 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict, extra: dict | None = None) -> None:
    """Write ``path`` (manifest) and ``path.bin`` holding ``arrays`` in order."""
    path = Path(path)
    entries, offset = [], 0
    blob = path.with_suffix(".bin")
    with open(blob, "wb") as fh:
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(a.tobytes())
            entries.append({"name": name, "shape": list(a.shape), "dtype": "float32", "offset": offset})
            offset += a.size
    manifest = {"format": "d2cl-checkpoint-1", "blob": blob.name, "n_values": offset,
                "arrays": entries, "extra": extra or {}}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "d2cl-checkpoint-1":
        raise CheckpointError(f"{path}: not a checkpoint manifest")
    data = np.fromfile(path.parent / manifest["blob"], dtype="<f4")
    if data.size != manifest["n_values"]:
        raise CheckpointError(f"{path}: blob has {data.size} values, manifest says {manifest['n_values']}")
    out = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = data[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return out, manifest["extra"]
