"""DCT bit-plane coding of residual matrices.

Each channel is transformed with an orthonormal DCT-II, the coefficient
matrix is read out channel-fastest, and the resulting vector is coded in
threshold passes T = 2^n_p, 2^(n_p-1), ..., 1.  In a pass every coefficient
that is not yet significant emits ``|D| >= T`` and, when set, a sign bit
(1 = negative) and is reconstructed at +-T.  Coefficients that were already
significant emit 0 to add T/2 (when D >= current value) or 1 to add -T/2.

The raw pass bits are then run-length and arithmetic coded; a budget cut
drops whole run symbols and the decoder simply reads the shorter prefix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, idct

from . import entropy
from .bitio import BitReader, BitWriter

HEADER_BITS = 16 + 16 + 8 + 1
BODY_HEADER_BITS = 32 + 16 + 32


class StreamError(ValueError):
    pass


def dct_channel(e):
    return dct(np.asarray(e, dtype=float), type=2, norm="ortho", axis=-1)


def idct_channel(D):
    return idct(np.asarray(D, dtype=float), type=2, norm="ortho", axis=-1)


def interleave(D):
    """(M, N) coefficients to an M*N vector holding D[l, n] at n*M + l."""
    return np.ascontiguousarray(np.asarray(D).T).ravel()


def deinterleave(v, M, N):
    return np.asarray(v).reshape(N, M).T.copy()


def initial_plane(d):
    peak = float(np.max(np.abs(d))) if d.size else 0.0
    if peak == 0.0:
        return None
    return math.floor(math.log2(peak))


def encode_planes(d, max_bits=None):
    """Raw significance/refinement bits for ``d`` down to T = 1.

    Returns (bits, n_p); n_p is None for an all-zero vector.  The pass loop
    is vectorised: within one pass every coefficient's output depends only
    on the state left by earlier passes.
    """
    d = np.asarray(d, dtype=float)
    n_p = initial_plane(d)
    if n_p is None:
        return np.zeros(0, dtype=np.uint8), None
    mag = np.abs(d)
    neg = d < 0
    sig = np.zeros(d.size, dtype=bool)
    rec = np.zeros(d.size)
    chunks, total = [], 0
    for plane in range(n_p, -1, -1):
        T = 2.0 ** plane
        new = ~sig & (mag >= T)
        first = np.where(sig, d < rec, new).astype(np.uint8)
        counts = 1 + new
        offsets = np.cumsum(counts) - counts
        bits = np.empty(int(counts.sum()), dtype=np.uint8)
        bits[offsets] = first
        bits[offsets[new] + 1] = neg[new]
        rec = np.where(sig, rec + np.where(first == 1, -T / 2, T / 2), rec)
        rec = np.where(new, np.where(neg, -T, T), rec)
        sig |= new
        chunks.append(bits)
        total += bits.size
        if max_bits is not None and total >= max_bits:
            break
    bits = np.concatenate(chunks)
    if max_bits is not None:
        bits = bits[:max_bits]
    return bits, n_p


def decode_planes(bits, n_p, length):
    """Reconstruction from any prefix of the raw pass bits."""
    rec = [0.0] * length
    if n_p is None or length == 0:
        return np.zeros(length)
    bits = np.asarray(bits, dtype=np.uint8).tolist()
    nb = len(bits)
    sig = [False] * length
    pos = 0
    for plane in range(n_p, -1, -1):
        T = 2.0 ** plane
        half = T / 2
        for m in range(length):
            if pos >= nb:
                return np.array(rec)
            if sig[m]:
                rec[m] += -half if bits[pos] else half
                pos += 1
            elif bits[pos]:
                if pos + 1 >= nb:
                    return np.array(rec)
                rec[m] = -T if bits[pos + 1] else T
                sig[m] = True
                pos += 2
            else:
                pos += 1
    return np.array(rec)


def pass_lengths(d):
    """Bits emitted by each full pass, for inspection."""
    d = np.asarray(d, dtype=float)
    n_p = initial_plane(d)
    if n_p is None:
        return []
    mag = np.abs(d)
    sig = np.zeros(d.size, dtype=bool)
    out = []
    for plane in range(n_p, -1, -1):
        new = ~sig & (mag >= 2.0 ** plane)
        out.append(int(d.size + new.sum()))
        sig |= new
    return out


@dataclass
class DctPlaneStream:
    M: int
    N: int
    n_p: int | None
    raw_bits: np.ndarray
    payload: np.ndarray           # arithmetic-coded run symbols, as bits

    @property
    def zero(self):
        return self.n_p is None

    @property
    def nbits(self):
        return HEADER_BITS + (0 if self.zero else BODY_HEADER_BITS + self.payload.size)

    def write(self, w: BitWriter):
        w.write_uint(self.M, 16)
        w.write_uint(self.N, 16)
        w.write_int(0 if self.zero else self.n_p, 8)
        w.write_uint(int(self.zero), 1)
        if self.zero:
            return
        w.write_uint(self.raw_bits.size, 32)
        w.write_uint(entropy.crc16(self.raw_bits), 16)
        w.write_uint(self.payload.size, 32)
        w.write_bits(self.payload)

    @classmethod
    def read(cls, r: BitReader):
        M = r.read_uint(16)
        N = r.read_uint(16)
        n_p = r.read_int(8)
        zero = r.read_uint(1)
        if zero:
            return cls(M, N, None, np.zeros(0, np.uint8), np.zeros(0, np.uint8))
        n_raw = r.read_uint(32)
        crc = r.read_uint(16)
        payload = r.read_bits(r.read_uint(32)).copy()
        raw = entropy.decode_runs(payload, n_raw)
        if entropy.crc16(raw) != crc:
            raise StreamError("residual stream fails its CRC-16 check")
        return cls(M, N, n_p, raw, payload)

    def decode(self):
        if self.zero:
            return np.zeros((self.M, self.N))
        d = decode_planes(self.raw_bits, self.n_p, self.M * self.N)
        return idct_channel(deinterleave(d, self.M, self.N))


def full_plane_bits(E):
    """Raw pass bits of a residual matrix and its initial plane."""
    E = np.asarray(E, dtype=float)
    return encode_planes(interleave(dct_channel(E)))


def encode_residual(E, budget_bits=None, planes=None):
    """Code an (M, N) residual within ``budget_bits`` total stream bits.

    ``planes`` may carry a precomputed ``full_plane_bits(E)`` result.
    """
    E = np.asarray(E, dtype=float)
    M, N = E.shape
    raw, n_p = planes if planes is not None else full_plane_bits(E)
    empty = np.zeros(0, dtype=np.uint8)
    if n_p is None or n_p < 0:
        return DctPlaneStream(M, N, None, empty, empty)
    if not -128 <= n_p < 128:
        raise StreamError(f"initial plane {n_p} does not fit the 8-bit header field")
    room = None
    if budget_bits is not None:
        room = int(budget_bits) - HEADER_BITS - BODY_HEADER_BITS
        if room <= 0:
            return DctPlaneStream(M, N, None, empty, empty)
    payload, covered = entropy.encode_runs(raw, room)
    if covered == 0:
        return DctPlaneStream(M, N, None, empty, empty)
    return DctPlaneStream(M, N, n_p, raw[:covered].copy(), payload)


def retruncate(stream: DctPlaneStream, budget_bits):
    """Re-terminate an existing stream at a smaller budget."""
    if stream.zero:
        return stream
    return encode_residual(np.zeros((stream.M, stream.N)), budget_bits,
                           planes=(stream.raw_bits, stream.n_p))
