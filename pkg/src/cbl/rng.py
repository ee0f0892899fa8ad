"""Seed derivation shared by every randomized component.

All randomness flows from one master seed. Child streams are keyed by
``sha256(master || key_1 || ... || key_k)`` so that a replicate's stream
depends only on its key, never on scheduling or on how many draws other
replicates made.

* Instance generators use :class:`random.Random` (Mersenne Twister) seeded
  with the derived 64-bit integer; only ``random()``/``getrandbits`` based
  methods are used.
* Statistical code uses numpy's counter-based ``Philox`` bit generator,
  keyed by the same derivation.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np

GENERATOR_NAME = "numpy.random.Philox (counter-based, 64-bit key from sha256)"
DERIVATION_RULE = "seed_k = uint64(sha256(b'cbl' | master | key_1 | ... | key_k)[:8], little-endian)"

MASK64 = (1 << 64) - 1


def derive_seed(master: int, *keys: int | str) -> int:
    """Return a 64-bit child seed for ``keys`` under ``master``."""
    h = hashlib.sha256(b"cbl")
    h.update(int(master & MASK64).to_bytes(8, "little"))
    for k in keys:
        if isinstance(k, str):
            b = k.encode()
            h.update(b"s" + len(b).to_bytes(4, "little") + b)
        else:
            h.update(b"i" + int(k & MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest()[:8], "little")


def numpy_rng(master: int, *keys: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *keys)))


def py_rng(master: int, *keys: int | str) -> random.Random:
    return random.Random(derive_seed(master, *keys))


def shuffled(rng: random.Random, seq) -> list:
    """Fisher-Yates on top of ``rng.random()`` (stable across Python versions)."""
    out = list(seq)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.random() * (i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def randint(rng: random.Random, lo: int, hi: int) -> int:
    """Uniform integer in ``[lo, hi]`` built on ``rng.random()``."""
    return lo + int(rng.random() * (hi - lo + 1))


def sample(rng: random.Random, seq, k: int) -> list:
    return shuffled(rng, seq)[:k]
