"""Counter-based random streams.

Every Gaussian draw is a pure function of ``(seed, stream, counter)``: the
Philox4x64-10 block cipher is keyed with ``(seed, stream)`` and applied to the
block counter ``counter // 4``; each 4-word output block yields four standard
normals through two Box-Muller pairs.  Replica ``r`` of an experiment uses
stream index ``r``, so results do not depend on how replicas are scheduled.

The bijection is the same one used by :class:`numpy.random.Philox`; numpy
advances its counter before the first block, so numpy block ``j`` equals our
block ``j + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53
_TWO_PI = 2.0 * np.pi


@nb.njit(inline="always", cache=True)
def _mulhilo(a, b):
    lo = a * b
    a0 = a & _MASK32
    a1 = a >> _S32
    b0 = b & _MASK32
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _MASK32) + (p10 & _MASK32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, lo


@nb.njit(cache=True, nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x64 on counter ``(c0..c3)`` with key ``(k0, k1)``."""
    for _ in range(10):
        h0, l0 = _mulhilo(_M0, c0)
        h1, l1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = h1 ^ c1 ^ k0, l1, h0 ^ c3 ^ k1, l0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def _box_muller(a, b):
    # (a >> 11) + 0.5 keeps the radial uniform strictly inside (0, 1)
    u1 = ((a >> _S11) + 0.5) * _TWO_M53
    u2 = (b >> _S11) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    return r * np.cos(ang), r * np.sin(ang)


@nb.njit(cache=True, nogil=True)
def fill_normals(seed, stream, counter, out):
    """Write consecutive normals ``counter, counter+1, ...`` of one stream into ``out``."""
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    zero = np.uint64(0)
    count = out.shape[0]
    pos = 0
    c = counter
    while pos < count:
        block = c >> 2
        lane = c & 3
        w0, w1, w2, w3 = philox4x64(np.uint64(block), zero, zero, zero, k0, k1)
        z0, z1 = _box_muller(w0, w1)
        z2, z3 = _box_muller(w2, w3)
        for q in range(lane, 4):
            if pos >= count:
                break
            if q == 0:
                out[pos] = z0
            elif q == 1:
                out[pos] = z1
            elif q == 2:
                out[pos] = z2
            else:
                out[pos] = z3
            pos += 1
            c += 1
    return out


@nb.njit(cache=True, nogil=True)
def _batch_normals(seed, streams, counters, count, out):
    for r in range(streams.shape[0]):
        fill_normals(seed, streams[r], counters[r], out[r])
    return out


@dataclass(frozen=True)
class RngStream:
    """One replica's random stream; ``counter`` is the index of the next normal."""

    seed: int
    stream: int
    counter: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise ValueError("seed and stream must fit in an unsigned 64-bit word")
        if self.counter < 0:
            raise ValueError("counter must be non-negative")

    def normals(self, count: int) -> np.ndarray:
        out = np.empty(count)
        return fill_normals(np.uint64(self.seed), np.uint64(self.stream), np.int64(self.counter), out)

    def advance(self, count: int) -> "RngStream":
        return RngStream(self.seed, self.stream, self.counter + count)


@dataclass(frozen=True)
class StreamBatch:
    """A batch of replica streams sharing one seed.

    ``counters`` may be a scalar offset or one offset per replica; nested
    estimators use per-replica offsets to carve disjoint counter ranges out of
    a single stream.
    """

    seed: int
    streams: np.ndarray
    counters: np.ndarray

    @classmethod
    def range(cls, seed: int, start: int, stop: int, counter: int = 0) -> "StreamBatch":
        streams = np.arange(start, stop, dtype=np.uint64)
        return cls(seed, streams, np.full(streams.shape, counter, dtype=np.int64))

    @classmethod
    def of(cls, rng: "RngStream | StreamBatch") -> "StreamBatch":
        if isinstance(rng, StreamBatch):
            return rng
        if isinstance(rng, RngStream):
            return cls(rng.seed, np.array([rng.stream], dtype=np.uint64),
                       np.array([rng.counter], dtype=np.int64))
        raise TypeError(f"expected RngStream or StreamBatch, got {type(rng).__name__}")

    def __post_init__(self):
        streams = np.asarray(self.streams, dtype=np.uint64).reshape(-1)
        counters = np.broadcast_to(np.asarray(self.counters, dtype=np.int64), streams.shape).copy()
        object.__setattr__(self, "streams", streams)
        object.__setattr__(self, "counters", counters)

    def __len__(self) -> int:
        return self.streams.shape[0]

    def normals(self, count: int) -> np.ndarray:
        """Array of shape ``(len(self), count)``; row ``r`` starts at ``counters[r]``."""
        out = np.empty((len(self), count))
        return _batch_normals(np.uint64(self.seed), self.streams, self.counters, count, out)

    def advance(self, count) -> "StreamBatch":
        return StreamBatch(self.seed, self.streams, self.counters + np.asarray(count, dtype=np.int64))

    def take(self, index) -> "StreamBatch":
        return StreamBatch(self.seed, self.streams[index], self.counters[index])


_TAG_SHIFT = 48


def tagged_streams(tag: int, start: int, stop: int) -> np.ndarray:
    """Stream indices ``start..stop-1`` inside namespace ``tag``.

    Tag 0 is the plain replica namespace (replica ``r`` is stream ``r``);
    auxiliary draws such as outer samples of nested estimators use other tags
    so they never collide with replica streams.
    """
    if not 0 <= start <= stop <= 2**_TAG_SHIFT:
        raise ValueError("stream range out of bounds")
    return (np.uint64(tag) << np.uint64(_TAG_SHIFT)) + np.arange(start, stop, dtype=np.uint64)
