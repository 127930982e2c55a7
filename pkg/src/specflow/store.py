"""On-disk artifact container: raw little-endian arrays plus a JSON manifest.

Every artifact (datasets, checkpoints, samples) is a directory holding one
``.bin`` file of raw little-endian bytes per array and a ``manifest.json``
describing shapes, dtypes and provenance.  Complex arrays are stored as
their native interleaved real/imaginary pairs, so a complex64 tensor is a
stream of 32-bit float pairs.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch

FORMAT = "specflow-arrays-v1"
MANIFEST_NAME = "manifest.json"


def _slug(name: str, taken: set) -> str:
    base = re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "array"
    slug, k = base, 1
    while slug in taken:
        slug, k = f"{base}.{k}", k + 1
    taken.add(slug)
    return slug


def save_arrays(path, arrays: dict, extra: dict | None = None) -> dict:
    """Write arrays and manifest under ``path`` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    taken: set = set()
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr))
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        fname = _slug(name, taken) + ".bin"
        le.tofile(path / fname)
        entries[name] = {"file": fname, "shape": list(arr.shape), "dtype": str(arr.dtype)}
    manifest = {
        "format": FORMAT,
        "byte_order": "little",
        "arrays": entries,
        "extra": extra or {},
    }
    with (path / MANIFEST_NAME).open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_manifest(path) -> dict:
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    with manifest_path.open() as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"unrecognized artifact format in {manifest_path}")
    return manifest


def load_arrays(path) -> tuple[dict, dict]:
    """Read every array named in the manifest; returns (arrays, manifest)."""
    path = Path(path)
    manifest = load_manifest(path)
    arrays = {}
    for name, entry in manifest["arrays"].items():
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        flat = np.fromfile(path / entry["file"], dtype=dtype)
        arrays[name] = flat.reshape(entry["shape"]).astype(dtype.newbyteorder("="), copy=False)
    return arrays, manifest


# ---------------------------------------------------------------------------
# model checkpoints

def state_dict_to_arrays(state: dict, prefix: str = "") -> dict:
    return {prefix + k: v.detach().cpu().numpy() for k, v in state.items()}


def arrays_to_state_dict(arrays: dict, prefix: str, like: dict) -> dict:
    out = {}
    for k, ref in like.items():
        arr = arrays[prefix + k]
        out[k] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype).reshape(ref.shape)
    return out


def flatten_optimizer_state(opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    """Split an optimizer state_dict into (tensor arrays, scalar skeleton)."""
    state = opt.state_dict()
    arrays = {}
    skeleton = {"param_groups": state["param_groups"], "state": {}}
    for pid, entries in state["state"].items():
        skeleton["state"][str(pid)] = {}
        for key, val in entries.items():
            if torch.is_tensor(val):
                arrays[f"opt.{pid}.{key}"] = val.detach().cpu().numpy()
                skeleton["state"][str(pid)][key] = {"tensor": True, "dtype": str(val.dtype)}
            else:
                skeleton["state"][str(pid)][key] = {"tensor": False, "value": val}
    return arrays, skeleton


def restore_optimizer_state(opt: torch.optim.Optimizer, arrays: dict, skeleton: dict):
    state = {"param_groups": skeleton["param_groups"], "state": {}}
    for pid_str, entries in skeleton["state"].items():
        pid = int(pid_str)
        state["state"][pid] = {}
        for key, meta in entries.items():
            if meta["tensor"]:
                arr = arrays[f"opt.{pid}.{key}"]
                tensor = torch.from_numpy(np.ascontiguousarray(arr))
                state["state"][pid][key] = tensor.to(_torch_dtype(meta["dtype"]))
            else:
                state["state"][pid][key] = meta["value"]
    opt.load_state_dict(state)


def _torch_dtype(name: str) -> torch.dtype:
    return getattr(torch, name.removeprefix("torch."))
