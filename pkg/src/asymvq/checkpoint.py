"""Versioned checkpoint archive (.avq) with byte-deterministic output.

A checkpoint is a ZIP holding ``manifest.json`` plus one ``tensors.bin``
blob. Tensor bytes are concatenated in sorted-name order; the manifest keeps
dtype/shape/offset per tensor, the JSON-serializable metadata (config, step,
optimizer layout), and the format version. Entries carry a fixed timestamp
and no compression, so saving identical state twice yields identical bytes.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import InputError

__all__ = ["load_checkpoint", "save_checkpoint"]

FORMAT = "avq-1"
_EPOCH = (1980, 1, 1, 0, 0, 0)

_TENSOR_KEY = "__tensor__"


def _encode_meta(obj, tensors: dict):
    """Replace tensors inside nested metadata with archive references."""
    if isinstance(obj, torch.Tensor):
        ref = f"meta/{len(tensors)}"
        tensors[ref] = obj
        return {_TENSOR_KEY: ref}
    if isinstance(obj, dict):
        # canonical key order so tensor reference numbering never depends on
        # dict insertion history (a reloaded run must re-serialize identically)
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return {str(k): _encode_meta(v, tensors) for k, v in items}
    if isinstance(obj, (list, tuple)):
        return [_encode_meta(v, tensors) for v in obj]
    return obj


def _decode_meta(obj, tensors: dict):
    if isinstance(obj, dict):
        if set(obj.keys()) == {_TENSOR_KEY}:
            return tensors.pop(obj[_TENSOR_KEY])
        return {k: _decode_meta(v, tensors) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_meta(v, tensors) for v in obj]
    return obj


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict) -> Path:
    """Write tensors plus metadata; metadata may itself contain tensors."""
    path = Path(path)
    all_tensors = dict(tensors)
    encoded_meta = _encode_meta(meta, all_tensors)

    index = {}
    blob = bytearray()
    for name in sorted(all_tensors):
        t = all_tensors[name].detach().cpu().contiguous()
        arr = t.numpy()
        data = arr.tobytes()
        index[name] = {
            "dtype": str(arr.dtype),
            "shape": list(t.shape),
            "offset": len(blob),
            "nbytes": len(data),
        }
        blob += data

    manifest = json.dumps(
        {"format": FORMAT, "meta": encoded_meta, "tensors": index},
        sort_keys=True,
        separators=(",", ":"),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as z:
        for name, data in (("manifest.json", manifest.encode()), ("tensors.bin", bytes(blob))):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            z.writestr(info, data)
    return path


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as z:
        manifest = json.loads(z.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise InputError(f"unsupported checkpoint format: {manifest.get('format')!r}")
        blob = z.read("tensors.bin")
    tensors = {}
    for name, spec in manifest["tensors"].items():
        arr = np.frombuffer(
            blob, dtype=np.dtype(spec["dtype"]), count=int(np.prod(spec["shape"], dtype=np.int64)),
            offset=spec["offset"],
        )
        tensors[name] = torch.from_numpy(arr.copy()).reshape(spec["shape"])
    meta = _decode_meta(manifest["meta"], tensors)
    plain = {n: t for n, t in tensors.items() if not n.startswith("meta/")}
    return plain, meta
