"""Bit-level helpers: Elias-gamma codes, byte-table select, chunked pointer storage."""

import math

from .core import TinyPointer, TinyPtrError

C_CHUNK = 8


class DecodeError(TinyPtrError, ValueError):
    pass


class RankOutOfRange(TinyPtrError, IndexError):
    pass


class ChunkOverflow(TinyPtrError):
    pass


def gamma_encode(v: int) -> str:
    """Elias-gamma code of ``v >= 1``: ``floor(log2 v)`` zeros, then ``v`` in binary."""
    if v < 1:
        raise ValueError(f"gamma codes need v >= 1, got {v}")
    body = format(v, "b")
    return "0" * (len(body) - 1) + body


def gamma_length(v: int) -> int:
    return 2 * (v.bit_length() - 1) + 1


def gamma_decode_prefix(bits: str, pos: int = 0):
    """Decode one gamma code starting at ``pos``; returns ``(value, end)``."""
    z = pos
    while z < len(bits) and bits[z] == "0":
        z += 1
    zeros = z - pos
    end = z + zeros + 1
    if z >= len(bits) or end > len(bits):
        raise DecodeError(f"truncated gamma code at bit {pos}")
    return int(bits[z:end], 2), end


def gamma_decode(bits: str) -> int:
    v, end = gamma_decode_prefix(bits)
    if end != len(bits):
        raise DecodeError(f"{len(bits) - end} trailing bits after gamma code")
    return v


# byte tables: popcount and position of the r-th set bit
POPCOUNT8 = [bin(b).count("1") for b in range(256)]
SELECT8 = [[i for i in range(8) if b >> i & 1] for b in range(256)]


def _as_int(bitmap):
    if isinstance(bitmap, int):
        return bitmap
    out = 0
    for i, w in enumerate(bitmap):
        if not 0 <= w < 1 << 64:
            raise ValueError("bitmap words must be 64-bit unsigned")
        out |= int(w) << (64 * i)
    return out


def select_one(bitmap, j: int) -> int:
    """Position of the ``j``-th set bit (0-indexed, LSB first).

    ``bitmap`` is an ``int`` or a sequence of 64-bit words, word 0 lowest.
    Works a byte at a time through the lookup tables above.
    """
    x = _as_int(bitmap)
    if j < 0:
        raise RankOutOfRange(f"rank {j} is negative")
    data = x.to_bytes((x.bit_length() + 7) // 8, "little")
    for i, byte in enumerate(data):
        c = POPCOUNT8[byte]
        if j < c:
            return 8 * i + SELECT8[byte][j]
        j -= c
    raise RankOutOfRange("rank exceeds popcount")


def select_one_naive(bitmap, j: int) -> int:
    x = _as_int(bitmap)
    if j < 0:
        raise RankOutOfRange(f"rank {j} is negative")
    pos = 0
    while x:
        if x & 1:
            if j == 0:
                return pos
            j -= 1
        x >>= 1
        pos += 1
    raise RankOutOfRange("rank exceeds popcount")


class ChunkedPointerArray:
    """Array of variable-length bit strings packed into fixed-capacity chunks.

    Each chunk holds ``chunk_len`` entries in one payload integer (entry
    ``t`` at bit offset ``start_t``, LSB first) and one boundary integer with
    a set bit at ``start_t + t`` for every entry plus a terminal bit at
    ``total + chunk_len``.  Offsetting by ``t`` keeps empty entries distinct.
    Finding entry ``t`` is two selects on the boundary bits.
    """

    def __init__(self, size: int, k_avg: float, log_n: int, capacity_const: int = C_CHUNK):
        if size < 1:
            raise ValueError("size must be >= 1")
        if log_n < 1:
            raise ValueError("log_n must be >= 1")
        self.size = size
        self.k_avg = k_avg
        self.log_n = log_n
        self.chunk_len = math.ceil(log_n / max(1.0, k_avg)) * 4
        self.capacity = capacity_const * log_n
        self.num_chunks = -(-size // self.chunk_len)
        self.payload = [0] * self.num_chunks
        terminal = 1 << self.chunk_len
        self.boundary = [(1 << self.chunk_len) - 1 | terminal] * self.num_chunks
        self.used = [0] * self.num_chunks

    def _locate(self, idx):
        if not 0 <= idx < self.size:
            raise IndexError(f"index {idx} outside [0, {self.size})")
        return divmod(idx, self.chunk_len)

    def _span(self, chunk, t):
        b = self.boundary[chunk]
        pos = select_one(b, t)
        nxt = select_one(b, t + 1)
        return pos, nxt - pos - 1

    def get(self, idx: int) -> TinyPointer:
        chunk, t = self._locate(idx)
        pos, length = self._span(chunk, t)
        start = pos - t
        return TinyPointer((self.payload[chunk] >> start) & ((1 << length) - 1), length)

    def set(self, idx: int, p: TinyPointer) -> None:
        chunk, t = self._locate(idx)
        pos, old = self._span(chunk, t)
        new = p.length
        used = self.used[chunk] - old + new
        if used > self.capacity:
            raise ChunkOverflow(f"chunk {chunk} would hold {used} > {self.capacity} bits")
        start = pos - t
        pay = self.payload[chunk]
        self.payload[chunk] = (
            (pay & ((1 << start) - 1)) | (p.bits << start) | ((pay >> (start + old)) << (start + new))
        )
        b = self.boundary[chunk]
        self.boundary[chunk] = (b & ((1 << (pos + 1)) - 1)) | ((b >> (pos + 1 + old)) << (pos + 1 + new))
        self.used[chunk] = used

    def clear(self, idx: int) -> None:
        self.set(idx, TinyPointer(0, 0))

    def payload_bits(self) -> int:
        return sum(self.used)

    def space_bits(self) -> int:
        """Payload capacity plus boundary bitmap per chunk."""
        return self.num_chunks * (self.capacity + self.capacity + self.chunk_len + 1)

    def __len__(self):
        return self.size


def cpa_set(arr: ChunkedPointerArray, idx: int, p: TinyPointer) -> None:
    arr.set(idx, p)


def cpa_get(arr: ChunkedPointerArray, idx: int) -> TinyPointer:
    return arr.get(idx)
