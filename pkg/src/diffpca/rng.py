"""Counter-based random streams for reproducible, order-independent simulation.

Every draw is keyed by (seed, lane, tags..., block): lane separates the
pre-exposure state simulation, the post-exposure payoff simulation, the
nested oracle's inner paths, and pricing runs; tags carry per-use counters
(time-step index, outer-state row). Normals for path i always come from the
block containing row i, so path i's numbers depend only on the key and i,
never on how many paths are drawn together or in what order.
"""

import numpy as np

BLOCK = 4096

# lane tags
STATE = 0
PAYOFF = 1
INNER = 2
PRICE = 3


_MASK = (1 << 64) - 1


def _mix(seed, *tags):
    """Fold (seed, tags...) into a 128-bit Philox key, splitmix-style.

    The key chains through every fold, so both output words depend on the
    full tag sequence (length included, to keep (1,) and (1, 0) apart).
    """
    key = (int(seed) * 0x9E3779B97F4A7C15 + 1) & _MASK
    words = []
    for t in (len(tags), *tags):
        key = ((key + int(t) + 0xBF58476D1CE4E5B9) * 0x94D049BB133111EB) & _MASK
        words.append(key)
    while len(words) < 2:
        key = (key * 0xD1342543DE82EF95 + 0x2545F4914F6CDD1D) & _MASK
        words.append(key)
    return words[-2:]


def stream(seed, *tags):
    """A numpy Generator whose identity is exactly (seed, tags...)."""
    return np.random.Generator(np.random.Philox(key=_mix(seed, *tags)))


def draw_normals(seed, lane, tags, offset, count, width):
    """Standard normals of shape (count, width) for path rows
    [offset, offset + count): whole keyed blocks are drawn and sliced, so
    row i is a pure function of (seed, lane, tags, offset + i)."""
    if count < 0 or offset < 0:
        raise ValueError("offset and count must be >= 0")
    out = np.empty((count, width))
    pos = 0
    b = offset // BLOCK
    while pos < count:
        lo = max(offset, b * BLOCK)
        hi = min(offset + count, (b + 1) * BLOCK)
        z = stream(seed, lane, *tags, b).standard_normal((BLOCK, width))
        out[pos:pos + (hi - lo)] = z[lo - b * BLOCK:hi - b * BLOCK]
        pos += hi - lo
        b += 1
    return out
