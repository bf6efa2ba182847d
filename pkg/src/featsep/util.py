"""Shared helpers: seeded RNG trees, config hashing, small CSV I/O."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np


def rng_from(root_seed: int, *path) -> np.random.Generator:
    """Derive an independent generator from a root seed and a key path.

    The same (root_seed, path) always yields the same stream, and distinct
    paths yield statistically independent streams, so per-sample generators
    do not depend on iteration order.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:4], "little"))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace drift)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path):
    """Read a CSV written by write_csv: returns (header, rows-of-strings)."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:] if line]


def output_root(default: str = "runs") -> Path:
    """Root directory for run artifacts, overridable via FEATSEP_OUT_ROOT."""
    return Path(os.environ.get("FEATSEP_OUT_ROOT", default))
