"""On-disk formats: array bundles (manifest + raw float64 blobs) and CSV reports.

A bundle is a directory::

    manifest.json          UTF-8 JSON, sorted keys, LF line endings
    arrays/<name>.f64      raw little-endian float64, C order, no header

The manifest records, per array, its shape, dtype tag, file name, byte
offset (always 0, one blob per array), byte count and the original kind
(``float`` or ``int``; integers are stored as exact float64 values).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
ARRAY_DIR = "arrays"
DTYPE = "<f8"


class BundleError(OSError):
    """Missing, truncated or inconsistent bundle on disk."""


def code_hash() -> str:
    """Git-style blob hash of the package version string."""
    payload = f"mgino {__version__}".encode()
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class Bundle:
    kind: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def save_bundle(path: str | os.PathLike, bundle: Bundle) -> Path:
    """Write ``bundle`` atomically (staged directory, then rename)."""
    path = Path(path)
    stage = path.with_name(path.name + ".tmp")
    try:
        if stage.exists():
            _rmtree(stage)
        (stage / ARRAY_DIR).mkdir(parents=True)
        entries = []
        for name in sorted(bundle.arrays):
            if "/" in name or name.startswith("."):
                raise ValueError(f"invalid array name {name!r}")
            arr = np.asarray(bundle.arrays[name])
            kind = "int" if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else "float"
            data = np.ascontiguousarray(arr, dtype=DTYPE)
            fname = f"{name}.f64"
            (stage / ARRAY_DIR / fname).write_bytes(data.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE,
                            "kind": kind, "file": f"{ARRAY_DIR}/{fname}", "offset": 0,
                            "nbytes": int(data.nbytes)})
        manifest = {"schema_version": SCHEMA_VERSION, "kind": bundle.kind,
                    "generator": f"mgino {__version__}", "code_hash": code_hash(),
                    "seed": bundle.seed, "config": bundle.config, "meta": bundle.meta,
                    "arrays": entries}
        (stage / MANIFEST).write_bytes(dumps(manifest).encode("utf-8"))
        if path.exists():
            _rmtree(path)
        stage.rename(path)
    except OSError as exc:
        raise BundleError(f"cannot write bundle {path}: {exc}") from exc
    return path


def load_bundle(path: str | os.PathLike) -> Bundle:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"cannot read manifest in {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleError(f"unsupported schema version {manifest.get('schema_version')!r}")
    arrays = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != 8 * count:
            raise BundleError(f"manifest size mismatch for {e['name']}")
        try:
            raw = (path / e["file"]).read_bytes()
        except OSError as exc:
            raise BundleError(f"missing blob for {e['name']}: {exc}") from exc
        blob = raw[e["offset"]:e["offset"] + e["nbytes"]]
        if len(blob) != e["nbytes"]:
            raise BundleError(f"truncated blob for {e['name']}")
        arr = np.frombuffer(blob, dtype=DTYPE).reshape(e["shape"]).copy()
        if e.get("kind") == "int":
            arr = arr.astype(np.int64)
        arrays[e["name"]] = arr
    return Bundle(manifest["kind"], arrays, manifest.get("config", {}),
                  manifest.get("seed"), manifest.get("meta", {}))


def _rmtree(p: Path) -> None:
    for child in p.iterdir():
        if child.is_dir():
            _rmtree(child)
        else:
            child.unlink()
    p.rmdir()


# -- CSV -----------------------------------------------------------------------

def format_value(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]],
             provenance: dict | None = None) -> str:
    """CSV with ``#``-prefixed provenance lines before the header."""
    buf = io.StringIO()
    if provenance is not None:
        for key in sorted(provenance):
            buf.write(f"# {key}={json.dumps(_jsonable(provenance[key]), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row length does not match header")
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]],
              provenance: dict | None = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(header, rows, provenance))
    except OSError as exc:
        raise BundleError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def provenance(config: dict, seed: int | None) -> dict:
    return {"config": config, "seed": seed, "code_hash": code_hash()}
