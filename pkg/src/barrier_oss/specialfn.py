"""Normal distribution helpers and a counter-based uniform generator.

The generator is Philox4x32-10 keyed by the 64-bit seed, with the path index
and draw counter forming the 128-bit counter. Any draw can therefore be
computed directly from ``(seed, path_index, counter)`` without touching any
other draw, which makes parallel and serial runs produce identical paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = [
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_inv_cdf",
    "RandomStream",
    "next_uniform",
    "philox4x32",
    "uniform_block",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


def std_normal_cdf(x):
    """Standard normal CDF; accepts scalars or arrays."""
    return _scalar_or_array(x, special.ndtr(x))


def std_normal_pdf(x):
    """Standard normal density exp(-x**2/2)/sqrt(2*pi)."""
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(x, _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def std_normal_inv_cdf(p):
    """Inverse standard normal CDF.

    Raises
    ------
    DomainError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    bad = ~((arr > 0.0) & (arr < 1.0))
    if np.any(bad):
        offending = arr[bad].flat[0] if arr.ndim else float(arr)
        raise DomainError(f"inverse normal CDF needs 0 < p < 1, got {offending!r}", offending)
    return _scalar_or_array(p, special.ndtri(arr))


# ---------------------------------------------------------------------------
# Philox4x32-10

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of four uint32 arrays (broadcastable)
    key : pair of python ints (32-bit words)

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit outputs
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for i in range(rounds):
        if i:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        prod0 = _M0 * c0
        prod1 = _M1 * c2
        hi0, lo0 = prod0 >> _SHIFT32, prod0 & _MASK32
        hi1, lo1 = prod1 >> _SHIFT32, prod1 & _MASK32
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
    return c0, c1, c2, c3


def _words_to_unit(a, b):
    # 53 random bits, then offset by half an ulp so 0 and 1 are unreachable
    m = (a >> np.uint64(5)) * np.uint64(1 << 26) + (b >> np.uint64(6))
    return (m.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def _key_words(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniform_block(seed: int, path_start: int, n_paths: int, n_draws: int) -> np.ndarray:
    """Uniforms for a contiguous range of paths.

    Entry ``[i, k]`` equals draw ``k`` of stream ``(seed, path_start + i)``,
    exactly as :func:`next_uniform` would return it.
    """
    n_blocks = (n_draws + 1) // 2
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)[:, None]
    blocks = np.arange(n_blocks, dtype=np.uint64)[None, :]
    x0, x1, x2, x3 = philox4x32(
        (blocks & _MASK32, blocks >> _SHIFT32, paths & _MASK32, paths >> _SHIFT32),
        _key_words(seed),
    )
    out = np.empty((n_paths, 2 * n_blocks))
    out[:, 0::2] = _words_to_unit(x0, x1)
    out[:, 1::2] = _words_to_unit(x2, x3)
    return out[:, :n_draws]


@dataclass(frozen=True)
class RandomStream:
    """Position in the uniform sequence of one simulated path."""

    seed: int
    path_index: int = 0
    counter: int = 0

    def __post_init__(self):
        if self.path_index < 0 or self.counter < 0:
            raise DomainError("path_index and counter must be non-negative")


def next_uniform(stream: RandomStream) -> tuple[float, RandomStream]:
    """Return the uniform at the stream's counter and the advanced stream."""
    block, half = divmod(stream.counter, 2)
    path = stream.path_index
    words = philox4x32(
        (block & 0xFFFFFFFF, block >> 32, path & 0xFFFFFFFF, path >> 32),
        _key_words(stream.seed),
    )
    u = _words_to_unit(words[2 * half], words[2 * half + 1])
    return float(u), replace(stream, counter=stream.counter + 1)
