"""Versioned ``.npz`` container for trained model parameters."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT = "trajsim-model"
VERSION = 1


class SnapshotError(ValueError):
    pass


def save_snapshot(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    header = json.dumps({"format": FORMAT, "version": VERSION, "kind": kind, "meta": meta},
                        sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)
    return path


def load_snapshot(path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as npz:
        if "__header__" not in npz.files:
            raise SnapshotError(f"{path}: not a model snapshot (missing header)")
        header = json.loads(str(npz["__header__"]))
        arrays = {k: npz[k] for k in npz.files if k != "__header__"}
    if header.get("format") != FORMAT:
        raise SnapshotError(f"{path}: unexpected format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {header.get('version')}")
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise SnapshotError(f"{path}: holds a {kind!r} model, expected {expect_kind!r}")
    return kind, header["meta"], arrays


def fingerprint(meta: dict, arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256(json.dumps(meta, sort_keys=True).encode())
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64 if arr.dtype.kind == "f" else arr.dtype)
    arr.setflags(write=False)
    return arr
