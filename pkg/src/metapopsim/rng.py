"""Counter-based random streams.

Every draw is addressed by ``(seed, substream, t)`` and, within a block, by the
element index. Two runs that request the same address get the same numbers no
matter how the work is split, which is what lets patch updates be computed in
any order.
"""

from __future__ import annotations

import numpy as np

# substream ids
OCCUPANCY = 1
LANDSCAPE = 2
INIT = 3
PATHS = 4
REFERENCE = 5

_MASK = (1 << 64) - 1


def _key(seed: int, substream: int) -> list[int]:
    return [int(seed) & _MASK, int(substream) & _MASK]


def generator(seed: int, substream: int, t: int = 0) -> np.random.Generator:
    """Philox generator for one ``(seed, substream, t)`` block."""
    bitgen = np.random.Philox(key=_key(seed, substream), counter=[0, 0, 0, int(t) & _MASK])
    return np.random.Generator(bitgen)


def uniforms(seed: int, substream: int, t: int, size) -> np.ndarray:
    return generator(seed, substream, t).random(size)


def derive_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th independent replicate or path batch."""
    ss = np.random.SeedSequence([int(seed) & _MASK, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
