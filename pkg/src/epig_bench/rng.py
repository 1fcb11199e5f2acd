"""Seed derivation.

Every random stream is a Philox (counter-based) generator keyed by
``sha256("base/trial/round/tag")``, so results do not depend on the order
in which streams are created or on which worker consumes them.
"""

import hashlib

import numpy as np


def derive_seed(base: int, *parts) -> int:
    key = "/".join(str(p) for p in (int(base),) + parts)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def make_rng(base: int, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(base, *parts)))
