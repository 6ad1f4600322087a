"""Stable seed derivation so partial reruns reproduce the same streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, name: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(root)}/{name}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(root: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, name, index))
