"""Run-length coding of bit sequences followed by adaptive arithmetic coding.

Runs alternate between zeros and ones, starting with zeros.  A run symbol
``s < 255`` emits ``s`` bits of the current value and toggles it; ``s = 255``
emits 255 bits and keeps the value, so long runs cost one escape per 255
bits.  Zero runs and one runs use separate adaptive order-0 models.
"""
from __future__ import annotations

import binascii
import struct

import numpy as np

ESCAPE = 255
ALPHABET = 256
RESCALE_AT = 1 << 14

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1


class ChecksumError(ValueError):
    pass


class AdaptiveModel:
    """Symbol counts in a Fenwick tree; counts start at 1 and halve at RESCALE_AT."""

    def __init__(self, size=ALPHABET):
        self.size = size
        self.freq = [1] * size
        self.total = size
        self._build()

    def _build(self):
        n = self.size
        tree = [0] * (n + 1)
        for i, f in enumerate(self.freq, 1):
            tree[i] += f
            j = i + (i & -i)
            if j <= n:
                tree[j] += tree[i]
        self.tree = tree
        top = 1
        while top * 2 <= n:
            top *= 2
        self._top = top

    def cum(self, sym):
        s, i, tree = 0, sym, self.tree
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def find(self, value):
        """Symbol whose cumulative interval holds ``value``."""
        pos, step, tree, n = 0, self._top, self.tree, self.size
        while step:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= value:
                pos = nxt
                value -= tree[nxt]
            step >>= 1
        return pos

    def update(self, sym):
        self.freq[sym] += 1
        self.total += 1
        if self.total >= RESCALE_AT:
            self.freq = [(f + 1) // 2 for f in self.freq]
            self.total = sum(self.freq)
            self._build()
            return
        i, tree, n = sym + 1, self.tree, self.size
        while i <= n:
            tree[i] += 1
            i += i & -i


class ArithmeticEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.out = []

    def encode(self, model: AdaptiveModel, sym):
        rng = self.high - self.low + 1
        total = model.total
        lo_c = model.cum(sym)
        hi_c = lo_c + model.freq[sym]
        low = self.low
        high = low + rng * hi_c // total - 1
        low = low + rng * lo_c // total
        out = self.out
        while not (low ^ high) & _HALF:
            bit = low >> (_STATE_BITS - 1)
            out.append(bit)
            if self.pending:
                out.extend([bit ^ 1] * self.pending)
                self.pending = 0
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while low & ~high & _QUARTER:
            self.pending += 1
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        self.low, self.high = low, high
        model.update(sym)

    @property
    def finished_size(self):
        return len(self.out) + 1

    def finish(self):
        self.out.append(1)
        return np.array(self.out, dtype=np.uint8)


class ArithmeticDecoder:
    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=np.uint8).tolist()
        self.pos = 0
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self._bit()

    def _bit(self):
        p = self.pos
        self.pos += 1
        return self.bits[p] if p < len(self.bits) else 0

    def decode(self, model: AdaptiveModel):
        rng = self.high - self.low + 1
        total = model.total
        value = ((self.code - self.low + 1) * total - 1) // rng
        sym = model.find(value)
        lo_c = model.cum(sym)
        hi_c = lo_c + model.freq[sym]
        low = self.low
        high = low + rng * hi_c // total - 1
        low = low + rng * lo_c // total
        code = self.code
        while not (low ^ high) & _HALF:
            code = ((code << 1) & _MASK) | self._bit()
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while low & ~high & _QUARTER:
            code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | self._bit()
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        self.low, self.high, self.code = low, high, code
        model.update(sym)
        return sym


def run_symbols(bits):
    """(context, symbol, bits covered) triples for a 0/1 sequence."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return []
    edges = np.flatnonzero(np.diff(bits)) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [bits.size]]))
    values = bits[starts]
    out = []
    if values[0] == 1:
        out.append((0, 0, 0))
    for v, length in zip(values.tolist(), lengths.tolist()):
        while length >= ESCAPE:
            out.append((v, ESCAPE, ESCAPE))
            length -= ESCAPE
        out.append((v, length, length))
    return out


def encode_runs(bits, max_payload_bits=None):
    """Arithmetic-code the run symbols of ``bits``.

    With ``max_payload_bits`` the stream is cut after the last whole symbol
    whose terminated payload still fits; returns (payload bits, number of
    raw bits represented).
    """
    symbols = run_symbols(bits)
    n_use = len(symbols)
    if max_payload_bits is not None:
        enc = ArithmeticEncoder()
        models = (AdaptiveModel(), AdaptiveModel())
        n_use = 0
        for ctx, sym, _ in symbols:
            enc.encode(models[ctx], sym)
            if enc.finished_size > max_payload_bits:
                break
            n_use += 1
    if n_use == 0:
        return np.zeros(0, dtype=np.uint8), 0
    enc = ArithmeticEncoder()
    models = (AdaptiveModel(), AdaptiveModel())
    covered = 0
    for ctx, sym, width in symbols[:n_use]:
        enc.encode(models[ctx], sym)
        covered += width
    covered = min(covered, int(np.asarray(bits).size))
    return enc.finish(), covered


def decode_runs(payload_bits, n_raw):
    if n_raw == 0:
        return np.zeros(0, dtype=np.uint8)
    dec = ArithmeticDecoder(payload_bits)
    models = (AdaptiveModel(), AdaptiveModel())
    out = np.empty(n_raw, dtype=np.uint8)
    pos, value = 0, 0
    while pos < n_raw:
        sym = dec.decode(models[value])
        take = min(sym, n_raw - pos)
        out[pos:pos + take] = value
        pos += take
        if sym != ESCAPE:
            value ^= 1
    return out


def crc16(bits):
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()
    return binascii.crc_hqx(packed, 0)


def rlc_arith_encode(bits):
    """Self-contained byte form: raw bit count (u32), CRC-16 of the bits, payload."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return b""
    payload, _ = encode_runs(bits)
    body = np.packbits(payload, bitorder="little").tobytes()
    return struct.pack("<IH", bits.size, crc16(bits)) + body


def rlc_arith_decode(data):
    if not data:
        return np.zeros(0, dtype=np.uint8)
    if len(data) < 6:
        raise ChecksumError("stream shorter than its header")
    n_raw, crc = struct.unpack("<IH", data[:6])
    payload = np.unpackbits(np.frombuffer(data[6:], dtype=np.uint8), bitorder="little")
    bits = decode_runs(payload, n_raw)
    if crc16(bits) != crc:
        raise ChecksumError("decoded bits fail the CRC-16 check")
    return bits
