"""LSB-first bit packing for the block bitstreams."""
from __future__ import annotations

import struct

import numpy as np


class TruncatedStream(ValueError):
    pass


class BitWriter:
    def __init__(self):
        self._chunks = []
        self.nbits = 0

    def write_uint(self, value, nbits):
        value = int(value)
        if nbits == 0:
            return
        if value < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self._chunks.append(np.array([(value >> i) & 1 for i in range(nbits)], dtype=np.uint8))
        self.nbits += nbits

    def write_int(self, value, nbits):
        self.write_uint(int(value) & ((1 << nbits) - 1), nbits)

    def write_f32(self, value):
        self.write_uint(struct.unpack("<I", struct.pack("<f", value))[0], 32)

    def write_f64(self, value):
        self.write_uint(struct.unpack("<Q", struct.pack("<d", value))[0], 64)

    def write_bits(self, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        self._chunks.append(bits)
        self.nbits += bits.size

    def bits(self):
        if not self._chunks:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self._chunks)

    def to_bytes(self):
        return np.packbits(self.bits(), bitorder="little").tobytes()


class BitReader:
    def __init__(self, data, nbits=None):
        if isinstance(data, (bytes, bytearray, memoryview)):
            bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), bitorder="little")
        else:
            bits = np.asarray(data, dtype=np.uint8)
        self._bits = bits if nbits is None else bits[:nbits]
        self.pos = 0

    @property
    def remaining(self):
        return self._bits.size - self.pos

    def read_bits(self, n):
        if n > self.remaining:
            raise TruncatedStream(f"wanted {n} bits, {self.remaining} left")
        out = self._bits[self.pos:self.pos + n]
        self.pos += n
        return out

    def read_uint(self, nbits):
        if nbits == 0:
            return 0
        bits = self.read_bits(nbits)
        return sum(int(b) << i for i, b in enumerate(bits))

    def read_int(self, nbits):
        v = self.read_uint(nbits)
        return v - (1 << nbits) if v >> (nbits - 1) else v

    def read_f32(self):
        return struct.unpack("<f", struct.pack("<I", self.read_uint(32)))[0]

    def read_f64(self):
        return struct.unpack("<d", struct.pack("<Q", self.read_uint(64)))[0]


def uint_bits(count):
    """Bits needed to index ``count`` distinct values."""
    return max(0, int(count - 1).bit_length())
