"""Shared helpers."""

import hashlib
import json
import zlib
from typing import Any

import numpy as np


def spawn_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the stream `name` under a master seed.

    Streams are keyed by a CRC of their name, so adding a robot (and its
    stream) leaves every other stream's draws unchanged.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def stable_hash(data: Any) -> str:
    """SHA-256 of the canonical JSON form of `data`."""
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
