"""Reference range coder with fixed-precision CDF tables.

Byte-oriented carry-aware range coder (LZMA lineage): 32-bit range,
renormalized whenever it drops below 2^24, so with 16-bit CDF totals the
truncation loss stays under ~0.006 bits/symbol. All state transitions are
integer arithmetic, which makes the byte output reproducible across runs
and platforms; the native kernel re-implements exactly these transitions.

The coder itself knows nothing about probability models. It codes symbol
*indices* against :class:`QuantizedCdf` tables. The value layer on top
(``encode_values`` / ``decode_values``) maps signed integer values to table
indices and handles the escape path: the last index of every table is an
escape symbol followed by the raw 32-bit value coded byte-wise against a
uniform table.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

# uniform 256-ary table used for the raw bytes of escaped values
_BYTE_CDF = tuple(i << 8 for i in range(257))


class RangeCoderError(Exception):
    pass


@dataclass(frozen=True)
class QuantizedCdf:
    """Fixed-precision cumulative counts for one symbol alphabet.

    ``cdf`` has ``n_symbols + 1`` entries, starts at 0, ends at ``TOTAL`` and
    is strictly increasing: every symbol keeps a nonzero probability. The
    last symbol is the escape slot. ``offset`` is the integer value encoded
    by index 0.
    """

    cdf: tuple[int, ...]
    offset: int

    def __post_init__(self):
        c = self.cdf
        if len(c) < 2 or c[0] != 0 or c[-1] != TOTAL:
            raise RangeCoderError("cdf must start at 0 and end at %d" % TOTAL)
        if any(c[i] >= c[i + 1] for i in range(len(c) - 1)):
            raise RangeCoderError("cdf must be strictly increasing")

    @property
    def n_symbols(self) -> int:
        return len(self.cdf) - 1

    @property
    def escape_index(self) -> int:
        return len(self.cdf) - 2


def pmf_to_cdf(pmf: np.ndarray) -> tuple[int, ...]:
    """Quantize a probability vector to strictly increasing 16-bit counts.

    Counts are floored, the remaining mass is handed out by descending
    fractional part (ties broken by lower index), then zero-count symbols
    steal from the largest counts. Pure integer output for identical float
    input, so both coder sides derive identical tables.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n = pmf.size
    if n < 1:
        raise RangeCoderError("empty pmf")
    if n > TOTAL:
        raise RangeCoderError("alphabet larger than CDF precision allows")
    pmf = np.maximum(pmf, 0.0)
    total = pmf.sum()
    if not np.isfinite(total) or total <= 0:
        scaled = np.full(n, TOTAL / n)
    else:
        scaled = pmf * (TOTAL / total)
    counts = np.floor(scaled).astype(np.int64)
    frac = scaled - counts
    deficit = TOTAL - int(counts.sum())
    if deficit > 0:
        order = np.lexsort((np.arange(n), -frac))
        whole, rem = divmod(deficit, n)
        counts += whole
        counts[order[:rem]] += 1
    # every symbol needs at least one count
    for i in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[i] = 1
        if counts[donor] < 1:
            raise RangeCoderError("cannot assign nonzero counts to all symbols")
    cdf = np.concatenate(([0], np.cumsum(counts)))
    assert cdf[-1] == TOTAL
    return tuple(int(x) for x in cdf)


class RangeEncoder:
    """Single-stream encoder. Use one instance per bitstream segment."""

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._finished = False

    def encode_symbol(self, cdf: Sequence[int], index: int) -> None:
        lo = cdf[index]
        hi = cdf[index + 1]
        r = self._range >> PRECISION
        self._low += r * lo
        self._range = r * (hi - lo)
        while self._range < _TOP:
            self._range = (self._range << 8) & _MASK32
            self._shift_low()

    def _shift_low(self) -> None:
        low32 = self._low & _MASK32
        if low32 < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            out = self._out
            out.append((self._cache + carry) & 0xFF)
            filler = (0xFF + carry) & 0xFF
            for _ in range(self._cache_size - 1):
                out.append(filler)
            self._cache_size = 0
            self._cache = (low32 >> 24) & 0xFF
        self._cache_size += 1
        self._low = (low32 & 0x00FFFFFF) << 8

    def flush(self) -> bytes:
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)

    # -- value layer -------------------------------------------------

    def encode_value(self, table: QuantizedCdf, value: int) -> None:
        index = value - table.offset
        if 0 <= index < table.escape_index:
            self.encode_symbol(table.cdf, index)
        else:
            self.encode_symbol(table.cdf, table.escape_index)
            raw = value & _MASK32
            for shift in (24, 16, 8, 0):
                self.encode_symbol(_BYTE_CDF, (raw >> shift) & 0xFF)

    def encode_values(self, values, table_ids, tables: Sequence[QuantizedCdf]) -> None:
        for v, t in zip(values, table_ids):
            self.encode_value(tables[t], int(v))


class RangeDecoder:
    """Single-stream decoder over an immutable byte buffer."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 1  # first byte emitted by the encoder is always 0
        self._range = _MASK32
        code = 0
        for _ in range(4):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        pos = self._pos
        self._pos = pos + 1
        if pos < len(self._data):
            return self._data[pos]
        return 0

    def decode_symbol(self, cdf: Sequence[int]) -> int:
        r = self._range >> PRECISION
        target = self._code // r
        if target >= TOTAL:
            target = TOTAL - 1
        index = bisect_right(cdf, target) - 1
        lo = cdf[index]
        hi = cdf[index + 1]
        self._code -= r * lo
        self._range = r * (hi - lo)
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range = (self._range << 8) & _MASK32
        return index

    # -- value layer -------------------------------------------------

    def decode_value(self, table: QuantizedCdf) -> int:
        index = self.decode_symbol(table.cdf)
        if index != table.escape_index:
            return index + table.offset
        raw = 0
        for _ in range(4):
            raw = (raw << 8) | self.decode_symbol(_BYTE_CDF)
        if raw >= 1 << 31:
            raw -= 1 << 32
        return raw

    def decode_values(self, table_ids, tables: Sequence[QuantizedCdf], out=None):
        n = len(table_ids)
        if out is None:
            out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i] = self.decode_value(tables[table_ids[i]])
        return out
