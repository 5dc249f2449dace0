"""Counter-based random streams.

Every random draw in the solver is a pure function of
``(master seed, purpose tag, iteration, pixel index, draw index)``, so a
pixel's draws do not depend on how many workers run or in which order
pixels are visited.  The compiled kernels implement the identical hash,
which keeps the two backends on the same streams.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

# purpose tags
TAG_INIT = 1
TAG_PERTURB = 2
TAG_RESTORE = 3
TAG_MISC = 4


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_u64(seed, tag, iteration, pixel, draw):
    """Vectorised 64-bit hash of the stream coordinates."""
    with np.errstate(over="ignore"):
        seed = np.asarray(seed, dtype=np.uint64)
        h = _mix(seed + GOLDEN * (np.uint64(tag) + np.uint64(1)))
        h = _mix(h ^ (np.asarray(iteration, dtype=np.uint64) * GOLDEN + np.uint64(0x632BE59BD9B4E019)))
        h = _mix(h ^ np.asarray(pixel, dtype=np.uint64))
        h = _mix(h ^ (np.asarray(draw, dtype=np.uint64) + np.uint64(0x8CB92BA72F3D8DD7)))
    return h


def uniform(seed, tag, iteration, pixel, draw):
    """Uniform doubles in [0, 1) with 53 random bits."""
    h = hash_u64(seed, tag, iteration, pixel, draw)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def normal(seed, tag, iteration, pixel, draw):
    """Standard normal draws (Box-Muller on draws ``2*draw`` and ``2*draw+1``)."""
    draw = np.asarray(draw, dtype=np.uint64)
    u1 = uniform(seed, tag, iteration, pixel, draw * np.uint64(2))
    u2 = uniform(seed, tag, iteration, pixel, draw * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
