"""Seed derivation.

Every random stage draws from numpy's PCG64 generator seeded by
``derive_seed(root, *keys)``: the stage keys are hashed with SHA-256 and fed
to :class:`numpy.random.SeedSequence` as its spawn key.  The same root and
keys give the same stream on every platform.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Optional

import numpy as np

ENV_SEED = "GRIDLEARN_SEED"


def _key_word(key: Any) -> int:
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed(root: int, *keys: Any) -> int:
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_key_word(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def rng(root: int, *keys: Any) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root, *keys)))


def resolve_seed(seed: Optional[int]) -> int:
    """Apply the environment override to a configured seed."""
    env = os.environ.get(ENV_SEED)
    if env is not None and env.strip():
        return int(env)
    return 0 if seed is None else int(seed)


def config_digest(obj: Any) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
