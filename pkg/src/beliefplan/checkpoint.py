"""Checkpoint persistence: a JSON manifest plus one binary blob.

The manifest lists parameter sets, block names, shapes and dtype; the blob
is the little-endian float64 values concatenated in manifest order. The
round trip is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .diffcore import ParamBlock, ParameterSet
from .errors import ArgumentError, IntegrityError, VersionError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "blob.bin"


def save_checkpoint(path: str, sets: dict[str, ParameterSet], meta: dict | None = None):
    """Write parameter sets under ``path`` (a directory, created if needed)."""
    os.makedirs(path, exist_ok=True)
    manifest = {"version": FORMAT_VERSION, "meta": meta or {}, "sets": {}}
    chunks = []
    for set_name in sorted(sets):
        entries = []
        for block in sets[set_name]:
            entries.append(
                {"name": block.name, "shape": list(block.shape), "dtype": "float64"}
            )
            chunks.append(block.values.astype("<f8").tobytes())
        manifest["sets"][set_name] = entries
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(os.path.join(path, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str) -> tuple[dict[str, ParameterSet], dict]:
    """Read parameter sets; raises IntegrityError on any inconsistency."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    blob_path = os.path.join(path, BLOB_NAME)
    if not os.path.isdir(path):
        raise ArgumentError(f"no checkpoint directory at {path!r}")
    if not os.path.exists(manifest_path) or not os.path.exists(blob_path):
        raise IntegrityError(f"checkpoint at {path!r} is missing manifest or blob")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionError(
            f"checkpoint version {manifest.get('version')} != {FORMAT_VERSION}"
        )
    blob = open(blob_path, "rb").read()
    expected = 0
    for entries in manifest["sets"].values():
        for e in entries:
            if e["dtype"] != "float64":
                raise IntegrityError(f"unsupported dtype {e['dtype']!r} in {e['name']!r}")
            n = 1
            for s in e["shape"]:
                n *= int(s)
            expected += 8 * n
    if len(blob) != expected:
        raise IntegrityError(
            f"blob length {len(blob)} does not match manifest total {expected}"
        )
    sets = {}
    offset = 0
    for set_name in sorted(manifest["sets"]):
        blocks = []
        for e in manifest["sets"][set_name]:
            shape = tuple(int(s) for s in e["shape"])
            n = 1
            for s in shape:
                n *= s
            values = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
            offset += 8 * n
            blocks.append(ParamBlock(e["name"], shape, values))
        sets[set_name] = ParameterSet(blocks)
    return sets, manifest.get("meta", {})


def verify_names(loaded: ParameterSet, expected_names: list[str], set_name: str):
    """Check a loaded set covers exactly the expected block names."""
    got = set(loaded.names())
    want = set(expected_names)
    if got != want:
        missing = sorted(want - got)
        extra = sorted(got - want)
        raise IntegrityError(
            f"set {set_name!r}: missing blocks {missing}, unexpected blocks {extra}"
        )
