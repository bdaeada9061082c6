"""Bit-packed spike kernels.

Binary channel vectors are packed eight channels per byte along the last
axis; the AND-popcount of two packed rows equals the arithmetic dot product
of the original 0/1 rows.
"""
import numpy as np

_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def pack_bits(spikes: np.ndarray) -> np.ndarray:
    """Pack a 0/1 array along its last axis into uint8 words (big-endian bit order)."""
    return np.packbits(np.asarray(spikes, dtype=np.uint8), axis=-1)


def unpack_bits(packed: np.ndarray, width: int) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, count=width)


def popcount(packed: np.ndarray) -> np.ndarray:
    """Number of set bits per row of a packed array (sum over the last axis)."""
    return _POPCOUNT8[packed].sum(axis=-1, dtype=np.int64)


def and_popcount(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """popcount(a AND b) over the last axis of two equally packed arrays."""
    return popcount(np.bitwise_and(a, b))


def headwise_and_popcount(q: np.ndarray, k: np.ndarray, heads: int) -> np.ndarray:
    """Per-head channel sums of q*k for binary (..., D) arrays.

    Returns an int64 array of shape (..., heads).
    """
    d = q.shape[-1]
    hd = d // heads
    qh = q.reshape(*q.shape[:-1], heads, hd)
    kh = k.reshape(*k.shape[:-1], heads, hd)
    return and_popcount(pack_bits(qh), pack_bits(kh))
