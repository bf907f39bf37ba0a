"""Deterministic random streams.

Every seeded operation in this package draws from the same generator:
numpy's Philox4x64-10 counter-based bit generator, keyed through a
``numpy.random.SeedSequence`` built from a tuple of 64-bit integer words.
The first word is a purpose tag (constants below) so that, for example,
an epoch shuffle and a synthetic-data draw with the same user seed do not
share a stream. Identical word tuples always produce identical streams,
on any platform.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. New call sites must take a fresh tag, never reuse one.
TAG_SHUFFLE = 1
TAG_INIT = 2
TAG_SYNTH = 3
TAG_SPLIT = 4
TAG_SUBSET = 5
TAG_FLIP = 6
TAG_PROJECTION = 7
TAG_RUN_SEED = 8

_U64 = np.uint64


def stream(*words: int) -> np.random.Generator:
    """Philox generator keyed by the given integer words.

    Words may be any Python ints (negative values are folded into the
    64-bit range); the tuple is hashed by SeedSequence into a Philox key.
    """
    folded = [int(np.asarray(w).astype(np.int64).view(_U64)) if w < 0 else int(w)
              for w in words]
    ss = np.random.SeedSequence(folded)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(*words: int) -> int:
    """A 63-bit seed deterministically mixed from the given words.

    Used to map (base seed, run index) pairs to per-run shuffle seeds so
    that paired runs share instance orderings.
    """
    return int(stream(TAG_RUN_SEED, *words).integers(0, 2**63))
