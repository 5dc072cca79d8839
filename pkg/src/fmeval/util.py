"""Small shared helpers: atomic file writes, hashing, seed derivation."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stable_hash(obj) -> str:
    return sha256_text(canonical_json(obj))[:16]


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_seed(seed: int, *labels: str) -> int:
    """Child seed for a named stream; independent of call order."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_label_key(s) for s in labels))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed: int, *labels: str) -> np.random.Generator:
    """Counter-based (Philox) generator for one named stream of a run seed."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_label_key(s) for s in labels))
    return np.random.Generator(np.random.Philox(ss))
