"""Counter-based random streams (Philox4x32-10).

Every draw is a pure function of ``(seed, stream, step, purpose)``, so a
particle's noise does not depend on how an ensemble is split across workers
or on the order particles are processed.

Counter layout per block of four 32-bit words::

    c0, c1 = low/high words of the step index
    c2     = stream index (particle or run id)
    c3     = purpose << 24 | block

The 64-bit seed becomes the two key words. Each block yields a Box-Muller
pair; normal number ``q`` of a stream is component ``q % 2`` of the pair at
step word ``q // 2``, so a d-dimensional walker uses ``q = step * d + axis``
and no draw is wasted in odd dimensions.
"""

import numba as nb
import numpy as np

__all__ = [
    "PURPOSE_NOISE",
    "PURPOSE_INIT",
    "PURPOSE_EXIT",
    "philox4x32",
    "normals",
    "uniforms",
    "split_seed",
]

PURPOSE_NOISE = 0
PURPOSE_INIT = 1
PURPOSE_EXIT = 2

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_PI = 2.0 * np.pi


def split_seed(seed):
    """Return the (k0, k1) key words of a non-negative 64-bit seed."""
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


@nb.njit(nogil=True, cache=True)
def _philox(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(nogil=True, cache=True)
def _uniform_pair(k0, k1, stream, step, purpose, block):
    c0 = np.uint64(step) & _MASK
    c1 = np.uint64(step) >> _S32
    c2 = np.uint64(stream) & _MASK
    c3 = (np.uint64(purpose) << np.uint64(24)) | np.uint64(block)
    w0, w1, w2, w3 = _philox(c0, c1, c2, c3, k0, k1)
    # 53-bit doubles in [0, 1)
    u0 = ((w0 >> np.uint64(5)) * np.uint64(67108864) + (w1 >> np.uint64(6))) / 9007199254740992.0
    u1 = ((w2 >> np.uint64(5)) * np.uint64(67108864) + (w3 >> np.uint64(6))) / 9007199254740992.0
    return u0, u1


@nb.njit(nogil=True, cache=True)
def _normal_pair(k0, k1, stream, step, purpose, block):
    u0, u1 = _uniform_pair(k0, k1, stream, step, purpose, block)
    r = np.sqrt(-2.0 * np.log(1.0 - u0))
    return r * np.cos(_TWO_PI * u1), r * np.sin(_TWO_PI * u1)


@nb.njit(nogil=True, cache=True)
def _fill_normals(k0, k1, streams, step, purpose, out):
    n, d = out.shape
    for i in range(n):
        q = step * d
        a = 0
        while a < d:
            z0, z1 = _normal_pair(k0, k1, streams[i], q // 2, purpose, 0)
            if q % 2 == 1:
                out[i, a] = z1
                q += 1
                a += 1
                continue
            out[i, a] = z0
            if a + 1 < d:
                out[i, a + 1] = z1
            q += 2
            a += 2


@nb.njit(nogil=True, cache=True)
def _fill_uniforms(k0, k1, streams, step, purpose, out):
    n, d = out.shape
    for i in range(n):
        for b in range((d + 1) // 2):
            u0, u1 = _uniform_pair(k0, k1, streams[i], step, purpose, b)
            out[i, 2 * b] = u0
            if 2 * b + 1 < d:
                out[i, 2 * b + 1] = u1


@nb.njit(cache=True)
def _philox_words(ctr, key):
    c0, c1, c2, c3 = _philox(
        np.uint64(ctr[0]), np.uint64(ctr[1]), np.uint64(ctr[2]), np.uint64(ctr[3]),
        np.uint64(key[0]), np.uint64(key[1]),
    )
    return np.array([c0, c1, c2, c3], dtype=np.uint64)


def philox4x32(counter, key):
    """Raw Philox4x32-10 block: four 32-bit counter words, two key words."""
    ctr = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    if ctr.shape != (4,) or k.shape != (2,):
        raise ValueError("counter needs 4 words and key needs 2 words")
    if np.any(ctr > 0xFFFFFFFF) or np.any(k > 0xFFFFFFFF):
        raise ValueError("words must fit in 32 bits")
    return _philox_words(ctr, k)


def normals(seed, streams, step, dim, purpose=PURPOSE_NOISE):
    """Standard normal draws, shape ``(len(streams), dim)``."""
    k0, k1 = split_seed(seed)
    streams = np.ascontiguousarray(streams, dtype=np.int64)
    out = np.empty((streams.shape[0], dim))
    _fill_normals(k0, k1, streams, np.int64(step), np.int64(purpose), out)
    return out


def uniforms(seed, streams, step, dim, purpose=PURPOSE_INIT):
    """Uniform [0, 1) draws, shape ``(len(streams), dim)``."""
    k0, k1 = split_seed(seed)
    streams = np.ascontiguousarray(streams, dtype=np.int64)
    out = np.empty((streams.shape[0], dim))
    _fill_uniforms(k0, k1, streams, np.int64(step), np.int64(purpose), out)
    return out
