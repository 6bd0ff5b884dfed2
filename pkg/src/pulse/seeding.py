"""Named, reproducible random streams derived from a single root seed.

Every consumer of randomness in a run (per-member weight init, per-epoch
batch shuffling, dropout masks, data subsampling, ...) draws from its own
stream, keyed by a human-readable path such as ``("init", member_index)`` or
``("batches", iteration, epoch)``.  Two properties follow:

* runs with the same root seed are bit-for-bit reproducible, and
* consumers are independent: adding a draw in one place does not shift the
  values another place sees, which is what makes checkpoint/resume at
  iteration boundaries exact.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(part) -> int:
    """Map an arbitrary path component to a stable 32-bit integer."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def seed_sequence(root_seed: int, *path) -> np.random.SeedSequence:
    """Build the seed sequence for the stream named by ``path``."""
    return np.random.SeedSequence([int(root_seed)] + [_key(p) for p in path])


def stream(root_seed: int, *path) -> np.random.Generator:
    """Return a fresh generator for the stream named by ``path``.

    Calling this twice with the same arguments yields two generators that
    produce identical draws.
    """
    return np.random.default_rng(seed_sequence(root_seed, *path))
