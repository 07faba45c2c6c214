"""Seed-key expansion into a running key.

Two expanders are provided: a Fibonacci LFSR with an openly known
connection polynomial, and the block-repetition expander whose weakness is
exploited by the block-guessing attack in :mod:`kcq.qubit`.

Polynomials are bit masks with LSB = x^0. The mask of x^4 + x + 1 is
``0x13``; its degree is the position of the highest set bit. The connection
polynomial C(x) = 1 + c_1 x + ... + c_d x^d drives the recurrence
s_j = c_1 s_{j-1} ^ ... ^ c_d s_{j-d}; the seed supplies s_0 .. s_{d-1} and
is also the start of the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# x^127 + x^126 + 1: reciprocal of the primitive trinomial x^127 + x + 1.
# Its smallest tap offset is 126, so 126 output bits come out per word step.
POLY_127 = (1 << 127) | (1 << 126) | 1

PRIMITIVE_POLYS = {
    4: 0x13,  # x^4 + x + 1
    8: 0x11D,  # x^8 + x^4 + x^3 + x^2 + 1
    16: 0x1002D,  # x^16 + x^5 + x^3 + x^2 + 1
    127: POLY_127,
}


class KeystreamError(ValueError):
    pass


def parse_bits(bits) -> np.ndarray:
    """Accept '0101', a sequence of 0/1, or a uint8 array; return uint8 array."""
    if isinstance(bits, str):
        s = bits.strip()
        if any(ch not in "01" for ch in s):
            raise KeystreamError(f"not a bit string: {bits!r}")
        return np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
    arr = np.asarray(bits, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise KeystreamError("bits must be 0 or 1")
    return arr.astype(np.uint8)


def bits_to_str(bits: Iterable[int]) -> str:
    return "".join(str(int(b)) for b in bits)


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Big-endian bit vector of ``value`` (first element = most significant)."""
    if value < 0 or value >> width:
        raise KeystreamError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def poly_degree(poly: int) -> int:
    if poly <= 1:
        raise KeystreamError("connection polynomial must have degree >= 1")
    if not poly & 1:
        raise KeystreamError("connection polynomial needs a constant term")
    return poly.bit_length() - 1


@dataclass
class Lfsr:
    """Fibonacci LFSR; output is the bit shifted out of the register.

    The register holds s_t .. s_{t+d-1} with s_t at bit 0.
    """

    poly: int
    seed: Sequence[int]
    _state: int = field(init=False, repr=False)

    def __post_init__(self):
        self.degree = poly_degree(self.poly)
        seed = parse_bits(self.seed)
        if seed.size != self.degree:
            raise KeystreamError(f"seed has {seed.size} bits, polynomial degree is {self.degree}")
        if not seed.any():
            raise KeystreamError("all-zero seed never leaves the zero state")
        self._state = sum(int(b) << i for i, b in enumerate(seed))
        d = self.degree
        self._taps = [i for i in range(1, d + 1) if (self.poly >> i) & 1]
        # bit (d - i) of the register is s_{t+d-i}
        self._tapmask = sum(1 << (d - i) for i in self._taps)
        self._block = min(self._taps)

    @property
    def state(self) -> int:
        return self._state

    def clone(self) -> "Lfsr":
        twin = Lfsr(self.poly, [1] + [0] * (self.degree - 1))
        twin._state = self._state
        return twin

    def next_bit(self) -> int:
        s = self._state
        out = s & 1
        fb = (s & self._tapmask).bit_count() & 1
        self._state = (s >> 1) | (fb << (self.degree - 1))
        return out

    def take(self, count: int) -> np.ndarray:
        if count < 0:
            raise KeystreamError("count must be nonnegative")
        if self._block == 1:
            return np.fromiter((self.next_bit() for _ in range(count)), dtype=np.uint8, count=count)
        return self._take_blocks(count)

    def _take_blocks(self, count: int) -> np.ndarray:
        # every tap offset is >= b, so the next b feedback bits depend only on the
        # current register and come out of one word operation
        d, b = self.degree, self._block
        mask = (1 << b) - 1
        shifts = [d - i for i in self._taps]
        words = []
        s = self._state
        for _ in range(count // b):
            fb = 0
            for sh in shifts:
                fb ^= (s >> sh) & mask
            words.append(s & mask)
            s = (s >> b) | (fb << (d - b))
        self._state = s
        head = _words_to_bits(words, b)
        tail = np.fromiter((self.next_bit() for _ in range(count % b)), dtype=np.uint8)
        return np.concatenate([head, tail])


def _words_to_bits(words: list[int], width: int) -> np.ndarray:
    if not words:
        return np.zeros(0, dtype=np.uint8)
    nbytes = (width + 7) // 8
    raw = b"".join(w.to_bytes(nbytes, "little") for w in words)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    return bits.reshape(len(words), nbytes * 8)[:, :width].reshape(-1)


def lfsr_stream(seed, poly: int, count: int) -> np.ndarray:
    """First ``count`` output bits of the LFSR seeded with ``seed``."""
    return Lfsr(poly, seed).take(count)


def period(seed, poly: int, limit: int | None = None) -> int:
    """Cycle length of the register state sequence starting from ``seed``."""
    reg = Lfsr(poly, seed)
    start = reg.state
    limit = limit if limit is not None else (1 << reg.degree)
    for step in range(1, limit + 1):
        reg.next_bit()
        if reg.state == start:
            return step
    raise KeystreamError(f"no cycle within {limit} steps")


@dataclass(frozen=True)
class RepeatExpansion:
    stream: np.ndarray
    block_of: np.ndarray  # key-bit index used at each position

    @property
    def block_len(self) -> int:
        return int(self.stream.size // (self.block_of.max() + 1))


def repeat_expand(key, n: int) -> RepeatExpansion:
    """Spread an m-bit key over n positions in m contiguous equal blocks."""
    key = parse_bits(key)
    m = key.size
    if m == 0 or n % m:
        raise KeystreamError(f"key length {m} must divide n={n}")
    block_of = np.repeat(np.arange(m), n // m)
    return RepeatExpansion(key[block_of], block_of)


def key_from_int(value: int, degree: int = 127) -> np.ndarray:
    """Seed bits for an integer key; zero is rejected like any all-zero seed."""
    if value == 0:
        raise KeystreamError("all-zero seed never leaves the zero state")
    return int_to_bits(value, degree)


@dataclass
class KeyMaterial:
    """A seed key and the expander that turns it into a running key.

    ``expander`` is ``"lfsr"`` (seed length = polynomial degree) or
    ``"repeat"`` (seed spread over ``repeat_total`` positions in blocks).
    Running-key bits are drawn lazily and never rewound, so consumption is
    tracked in ``consumed``.
    """

    seed: np.ndarray
    expander: str = "lfsr"
    poly: int = POLY_127
    repeat_total: int | None = None
    consumed: int = 0

    def __post_init__(self):
        self.seed = parse_bits(self.seed)
        if self.expander == "lfsr":
            self._gen = Lfsr(self.poly, self.seed)
        elif self.expander == "repeat":
            if self.repeat_total is None:
                raise KeystreamError("repeat expander needs repeat_total")
            self._repeat = repeat_expand(self.seed, self.repeat_total).stream
        else:
            raise KeystreamError(f"unknown expander {self.expander!r}")

    @classmethod
    def from_int(cls, value: int, degree: int = 127) -> "KeyMaterial":
        poly = PRIMITIVE_POLYS.get(degree)
        if poly is None:
            raise KeystreamError(f"no stock primitive polynomial of degree {degree}")
        return cls(key_from_int(value, degree), "lfsr", poly)

    @property
    def seed_bits(self) -> int:
        return int(self.seed.size)

    def running(self, count: int) -> np.ndarray:
        if self.expander == "lfsr":
            out = self._gen.take(count)
        else:
            if self.consumed + count > self._repeat.size:
                raise KeystreamError("repeat expansion exhausted")
            out = self._repeat[self.consumed:self.consumed + count]
        self.consumed += count
        return out
