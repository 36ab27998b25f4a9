"""Counter-based random streams.

Every uniform used by the simulators is a pure function of
``(seed, stream, kind, index)``: the 64-bit seed is the Threefry-2x32 key
and ``(stream, kind << 24 | index)`` is the counter.  Paths therefore own
independent substreams that can be evaluated in any order, in any chunking,
on any number of workers, with bit-identical results.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = [
    "threefry2x32",
    "uniforms",
    "normals",
    "RandomStream",
    "GAP",
    "INC",
    "JUMP",
    "JUMP_AUX",
    "BRIDGE",
    "REFINE",
    "SEQ",
]

# draw kinds (upper 8 bits of the second counter word)
GAP = 1
INC = 2
JUMP = 3
JUMP_AUX = 4
BRIDGE = 5
REFINE = 6
SEQ = 7

_INDEX_BITS = 24
_MAX_INDEX = (1 << _INDEX_BITS) - 1

_ROTATIONS = ((13, 15, 26, 6), (17, 29, 16, 24))
_PARITY = np.uint32(0x1BD11BDA)


def _rotl(v, r):
    return (v << np.uint32(r)) | (v >> np.uint32(32 - r))


def threefry2x32(key, counter):
    """Threefry-2x32 with 20 rounds, vectorised over counters.

    Parameters
    ----------
    key : pair of uint32 (scalars or broadcastable arrays)
    counter : pair of uint32 arrays

    Returns
    -------
    (x0, x1) : uint32 arrays
    """
    k0 = np.asarray(key[0], dtype=np.uint32)
    k1 = np.asarray(key[1], dtype=np.uint32)
    ks = (k0, k1, k0 ^ k1 ^ _PARITY)
    with np.errstate(over="ignore"):
        x0 = np.asarray(counter[0], dtype=np.uint32) + ks[0]
        x1 = np.asarray(counter[1], dtype=np.uint32) + ks[1]
        for block in range(5):
            for r in _ROTATIONS[block % 2]:
                x0 = x0 + x1
                x1 = _rotl(x1, r) ^ x0
            x0 = x0 + ks[(block + 1) % 3]
            x1 = x1 + ks[(block + 2) % 3] + np.uint32(block + 1)
    return x0, x1


def _split_seed(seed):
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must be in [0, 2**64)")
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def uniforms(seed, stream, kind, index):
    """Uniforms on the open interval (0, 1), 53 bits each.

    ``stream`` and ``index`` broadcast against each other; ``kind`` is a
    small integer tag separating the families of draws within a stream.
    """
    stream = np.asarray(stream, dtype=np.int64)
    index = np.asarray(index, dtype=np.int64)
    if np.any(index > _MAX_INDEX) or np.any(index < 0):
        raise OverflowError("draw index exceeds the 24-bit counter field")
    if np.any(stream < 0) or np.any(stream >= 1 << 32):
        raise OverflowError("stream id must fit in 32 bits")
    c0 = stream.astype(np.uint32)
    c1 = (np.int64(kind) << _INDEX_BITS | index).astype(np.uint32)
    c0, c1 = np.broadcast_arrays(c0, c1)
    x0, x1 = threefry2x32(_split_seed(seed), (c0, c1))
    bits = (x0.astype(np.uint64) << np.uint64(21)) | (x1.astype(np.uint64) >> np.uint64(11))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normals(seed, stream, kind, index):
    """Standard normals by inversion of :func:`uniforms`."""
    return ndtri(uniforms(seed, stream, kind, index))


class RandomStream:
    """The substream of one path.

    Addressed draws (``uniform(kind, index)``) are what the simulators use.
    ``random(size)`` is a sequential convenience that walks the ``SEQ``
    counter, for ad-hoc sampling outside the simulators.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._next = 0
        _split_seed(self.seed)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream={self.stream})"

    def uniform(self, kind, index):
        return uniforms(self.seed, self.stream, kind, index)

    def normal(self, kind, index):
        return normals(self.seed, self.stream, kind, index)

    def random(self, size=None):
        n = 1 if size is None else int(size)
        idx = np.arange(self._next, self._next + n)
        self._next += n
        u = uniforms(self.seed, self.stream, SEQ, idx)
        return float(u[0]) if size is None else u
