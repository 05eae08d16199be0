"""Run bundles: one directory per run with a SHA-256 manifest."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_vector(path, name: str, values) -> None:
    write_rows(path, ["index", name], [[i, repr(float(v))] for i, v in enumerate(np.asarray(values).ravel())])


def read_vector(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


def load_manifest(bundle) -> dict:
    p = Path(bundle) / MANIFEST
    if not p.exists():
        return {"files": {}, "notices": [], "status": "incomplete"}
    return read_json(p)


def update_manifest(bundle, status: str | None = None, notices=(), **extra) -> dict:
    """Rehash every file in the bundle and merge notices/status into the manifest."""
    bundle = Path(bundle)
    man = load_manifest(bundle)
    files = {}
    for p in sorted(bundle.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            files[p.relative_to(bundle).as_posix()] = sha256_file(p)
    man["files"] = files
    if status is not None:
        man["status"] = status
    for n in notices:
        if n not in man["notices"]:
            man["notices"].append(n)
    man.update(extra)
    write_json(bundle / MANIFEST, man)
    return man


def verify_manifest(bundle) -> list[str]:
    """Names of files whose hash disagrees with the manifest (missing files included)."""
    bundle = Path(bundle)
    bad = []
    for name, digest in load_manifest(bundle)["files"].items():
        p = bundle / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad
