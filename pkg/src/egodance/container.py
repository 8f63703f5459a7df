"""Directory container of raw little-endian arrays plus a JSON manifest.

Layout::

    <dir>/manifest.json      {"format": "egodance-container", "version": 1,
                              "entries": [{"name", "dtype", "shape", "path",
                                           "byte_order", "layout"}, ...],
                              "attrs": {...}}
    <dir>/<name>.bin         row-major little-endian bytes, no header

``dtype`` is one of ``f32``, ``f64``, ``i64``, ``u8``.  Blob length must equal
``itemsize * prod(shape)``.  The manifest is written last, via rename, so a
directory without one is never a half-written container.
"""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .errors import ValidationError

FORMAT = "egodance-container"
VERSION = 1
MANIFEST = "manifest.json"

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8"), "u8": np.dtype("u1")}
_CODES = {np.dtype("float32"): "f32", np.dtype("float64"): "f64", np.dtype("int64"): "i64",
          np.dtype("uint8"): "u8", np.dtype("bool"): "u8"}
_NAME = re.compile(r"^[A-Za-z0-9_.\-]+$")


class NotAContainerError(ValidationError):
    """The directory has no manifest."""


def _as_array(value):
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def write_container(path, arrays: dict, attrs: dict | None = None,
                    allow_nonfinite: bool = False) -> dict:
    """Write ``arrays`` (name -> array-like) under directory ``path``; returns the manifest."""
    path = Path(path)
    entries, blobs = [], []
    for name, value in arrays.items():
        if not _NAME.match(name) or name == MANIFEST:
            raise ValidationError(f"invalid array name {name!r}")
        arr = _as_array(value)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ValidationError(f"array {name!r} has unsupported dtype {arr.dtype}")
        if arr.dtype.kind == "f" and not allow_nonfinite and not np.isfinite(arr).all():
            raise ValidationError(f"array {name!r} contains non-finite values")
        blob = np.ascontiguousarray(arr.astype(DTYPES[code], copy=False))
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "path": f"{name}.bin", "byte_order": "little-endian", "layout": "row-major"})
        blobs.append(blob)
    manifest = {"format": FORMAT, "version": VERSION, "entries": entries, "attrs": attrs or {}}
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / MANIFEST).unlink(missing_ok=True)
        for entry, blob in zip(entries, blobs):
            (path / entry["path"]).write_bytes(blob.tobytes(order="C"))
        tmp = path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        os.replace(tmp, path / MANIFEST)
    except OSError as exc:
        raise OSError(f"failed writing container {path}: {exc}") from exc
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise NotAContainerError(f"{path} is not a container (no {MANIFEST})")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{mpath} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise ValidationError(f"{mpath} does not declare format {FORMAT!r}")
    if manifest.get("version") != VERSION:
        raise ValidationError(f"{mpath} has unsupported version {manifest.get('version')!r}")
    entries = manifest.get("entries")
    if not isinstance(entries, list):
        raise ValidationError(f"{mpath} has no entry list")
    seen = set()
    for i, e in enumerate(entries):
        _validate_entry(e, i, path)
        if e["name"] in seen:
            raise ValidationError(f"duplicate entry name {e['name']!r}")
        seen.add(e["name"])
    if not isinstance(manifest.get("attrs", {}), dict):
        raise ValidationError(f"{mpath} attrs must be an object")
    return manifest


def _validate_entry(e, i, root: Path):
    if not isinstance(e, dict):
        raise ValidationError(f"manifest entry {i} is not an object")
    name = e.get("name")
    label = f"entry {name!r}" if isinstance(name, str) else f"entry {i}"
    if not isinstance(name, str) or not _NAME.match(name):
        raise ValidationError(f"{label}: invalid name")
    if e.get("dtype") not in DTYPES:
        raise ValidationError(f"{label}: unknown dtype {e.get('dtype')!r}")
    shape = e.get("shape")
    if (not isinstance(shape, list) or not shape
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape)):
        raise ValidationError(f"{label}: shape must be a non-empty list of nonnegative integers")
    if e.get("byte_order") != "little-endian" or e.get("layout") != "row-major":
        raise ValidationError(f"{label}: only little-endian row-major blobs are supported")
    rel = e.get("path")
    if not isinstance(rel, str) or not rel:
        raise ValidationError(f"{label}: missing blob path")
    full = (root / rel).resolve()
    if root.resolve() not in full.parents:
        raise ValidationError(f"{label}: blob path escapes the container")


def read_container(path) -> dict[str, np.ndarray]:
    """All arrays of a container, exactly as written (native-endian copies)."""
    path = Path(path)
    manifest = read_manifest(path)
    out = {}
    for e in manifest["entries"]:
        dt = DTYPES[e["dtype"]]
        blob = path / e["path"]
        if not blob.is_file():
            raise ValidationError(f"entry {e['name']!r}: missing blob {e['path']}")
        data = blob.read_bytes()
        expected = dt.itemsize * int(np.prod(e["shape"], dtype=np.int64))
        if len(data) != expected:
            raise ValidationError(
                f"entry {e['name']!r}: blob has {len(data)} bytes, expected {expected}")
        arr = np.frombuffer(data, dtype=dt).reshape(e["shape"])
        out[e["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return out


def read_attrs(path) -> dict:
    return read_manifest(path).get("attrs", {})
