"""MSB-first bit packing and Exp-Golomb codes for the entropy layer."""

from __future__ import annotations

from .errors import ContractError, TruncationError


class BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def write_bits(self, value: int, n: int) -> None:
        if n < 0 or value < 0 or value >> n:
            raise ContractError(f"value {value} does not fit in {n} bits")
        self._acc = (self._acc << n) | value
        self._nbits += n
        while self._nbits >= 8:
            self._nbits -= 8
            self._bytes.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    def write_ue(self, value: int) -> None:
        """Unsigned Exp-Golomb: M zeros, a one, then M info bits."""
        if value < 0:
            raise ContractError(f"ue() needs a non-negative value, got {value}")
        m = (value + 1).bit_length() - 1
        self.write_bits(0, m)
        self.write_bits(1, 1)
        self.write_bits(value + 1 - (1 << m), m)

    def write_se(self, value: int) -> None:
        """Signed Exp-Golomb with the v>0 -> 2v-1, v<=0 -> -2v mapping."""
        self.write_ue(2 * value - 1 if value > 0 else -2 * value)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._bytes) + self._nbits

    def getvalue(self) -> bytes:
        """Byte-align with zero padding and return the buffer."""
        out = bytearray(self._bytes)
        if self._nbits:
            out.append((self._acc << (8 - self._nbits)) & 0xFF)
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0  # bit cursor

    def read_bits(self, n: int) -> int:
        end = self._pos + n
        if end > 8 * len(self._data):
            raise TruncationError(end, 8 * len(self._data), "bitstream (bits)")
        value = 0
        pos = self._pos
        while n:
            byte = self._data[pos >> 3]
            avail = 8 - (pos & 7)
            take = min(avail, n)
            shift = avail - take
            value = (value << take) | ((byte >> shift) & ((1 << take) - 1))
            pos += take
            n -= take
        self._pos = pos
        return value

    def read_ue(self) -> int:
        m = 0
        while self.read_bits(1) == 0:
            m += 1
            if m > 64:
                raise TruncationError(self._pos + 1, 8 * len(self._data), "exp-golomb prefix")
        return (1 << m) - 1 + self.read_bits(m)

    def read_se(self) -> int:
        code = self.read_ue()
        return (code + 1) // 2 if code % 2 else -(code // 2)

    @property
    def bit_position(self) -> int:
        return self._pos

    def bits_left(self) -> int:
        return 8 * len(self._data) - self._pos


def ue_length(value: int) -> int:
    m = (value + 1).bit_length() - 1
    return 2 * m + 1


def se_length(value: int) -> int:
    return ue_length(2 * value - 1 if value > 0 else -2 * value)
