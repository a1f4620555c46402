"""Haar wavelet plus 1-D set-partitioning coding of dipole moment waveforms.

Each moment row is normalised by its peak magnitude, transformed with an
orthonormal Haar DWT and coded with a SPIHT-style embedded coder over the
binary coefficient tree.  Reconstruction keeps the lower end of each
coefficient's magnitude interval, so every extra bit can only move a
coefficient towards its true value and any prefix decodes to a coarser
approximation whose error never exceeds that of a shorter prefix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitio import BitReader, BitWriter

DEFAULT_RATE = 3.0
MIN_PLANE_SPAN = 60
ROW_HEADER_BITS = 32 + 8 + 32


def default_levels(N):
    """Depth log2(N) - 3, reduced until N divides by 2^depth."""
    if N < 1:
        raise ValueError("empty signal")
    L = max(int(math.floor(math.log2(N))) - 3, 0)
    while L and N % (1 << L):
        L -= 1
    return L


def dwt_haar(x, levels):
    """Orthonormal Haar analysis, ordered [approx | detail_L | ... | detail_1]."""
    x = np.asarray(x, dtype=float)
    N = x.shape[-1]
    if N % (1 << levels):
        raise ValueError(f"length {N} is not divisible by 2^{levels}")
    a = x.copy()
    details = []
    for _ in range(levels):
        even, odd = a[..., 0::2], a[..., 1::2]
        details.append((even - odd) / math.sqrt(2))
        a = (even + odd) / math.sqrt(2)
    return np.concatenate([a] + details[::-1], axis=-1)


def idwt_haar(c, levels):
    c = np.asarray(c, dtype=float)
    N = c.shape[-1]
    if N % (1 << levels):
        raise ValueError(f"length {N} is not divisible by 2^{levels}")
    n = N >> levels
    a = c[..., :n]
    for _ in range(levels):
        d = c[..., n:2 * n]
        out = np.empty(a.shape[:-1] + (2 * n,))
        out[..., 0::2] = (a + d) / math.sqrt(2)
        out[..., 1::2] = (a - d) / math.sqrt(2)
        a = out
        n *= 2
    return a


class _Budget(Exception):
    pass


class _Tree:
    def __init__(self, N, levels):
        self.N = N
        self.A = N >> levels
        self.levels = levels

    def children(self, i):
        if self.levels == 0:
            return ()
        if i < self.A:
            return (self.A + i,)
        if i < self.N // 2:
            return (2 * i, 2 * i + 1)
        return ()


def _subtree_max(mag, tree: _Tree):
    """Max magnitude over all descendants and over grand-descendants."""
    N = tree.N
    desc = np.zeros(N)
    grand = np.zeros(N)
    for i in range(N - 1, -1, -1):
        kids = tree.children(i)
        if kids:
            desc[i] = max(max(mag[k], desc[k]) for k in kids)
            grand[i] = max(desc[k] for k in kids)
    return desc, grand


def _spiht(N, levels, n0, max_bits, coeffs=None, bits=None):
    """Shared control flow for the coder (``coeffs`` given) and decoder (``bits`` given).

    Returns (emitted bits, reconstruction).
    """
    tree = _Tree(N, levels)
    encoding = coeffs is not None
    rec = np.zeros(N)
    out = []
    if encoding:
        mag = np.abs(coeffs)
        neg = coeffs < 0
        desc, grand = _subtree_max(mag, tree)
        limit = max_bits
    else:
        bits = list(bits)
        limit = min(max_bits, len(bits))

    def io(value):
        p = len(out)
        if p >= limit:
            raise _Budget
        b = int(value) if encoding else bits[p]
        out.append(b)
        return b

    lip = list(range(tree.A))
    lis = [(i, 0) for i in range(tree.A) if tree.children(i)]
    lsp = []
    try:
        for n in range(n0, n0 - MIN_PLANE_SPAN, -1):
            T = 2.0 ** n
            n_old = len(lsp)
            keep = []
            for i in lip:
                if io(encoding and mag[i] >= T):
                    s = io(encoding and neg[i])
                    rec[i] = -T if s else T
                    lsp.append(i)
                else:
                    keep.append(i)
            lip = keep
            queue, lis = lis, []
            k = 0
            while k < len(queue):
                i, kind = queue[k]
                k += 1
                if kind == 0:
                    if not io(encoding and desc[i] >= T):
                        lis.append((i, 0))
                        continue
                    for c in tree.children(i):
                        if io(encoding and mag[c] >= T):
                            s = io(encoding and neg[c])
                            rec[c] = -T if s else T
                            lsp.append(c)
                        else:
                            lip.append(c)
                    if any(tree.children(c) for c in tree.children(i)):
                        queue.append((i, 1))
                elif io(encoding and grand[i] >= T):
                    queue.extend((c, 0) for c in tree.children(i))
                else:
                    lis.append((i, 1))
            for i in lsp[:n_old]:
                if io(encoding and (math.floor(mag[i] / T) & 1)):
                    rec[i] += -T if rec[i] < 0 else T
    except _Budget:
        pass
    return np.array(out, dtype=np.uint8), rec



@dataclass
class CodedRow:
    scale: float          # float32 peak magnitude; 0 flags an all-zero row
    n0: int               # top bit plane of the normalised coefficients
    bits: np.ndarray

    @property
    def nbits(self):
        return ROW_HEADER_BITS + self.bits.size


@dataclass
class CodedMoments:
    rows: list
    N: int
    levels: int
    rate: float

    @property
    def nbits(self):
        return sum(r.nbits for r in self.rows)

    def write(self, w: BitWriter):
        for r in self.rows:
            w.write_f32(r.scale)
            w.write_int(r.n0, 8)
            w.write_uint(r.bits.size, 32)
            w.write_bits(r.bits)

    @classmethod
    def read(cls, r: BitReader, n_rows, N, rate=DEFAULT_RATE):
        rows = []
        for _ in range(n_rows):
            scale = r.read_f32()
            n0 = r.read_int(8)
            rows.append(CodedRow(scale, n0, r.read_bits(r.read_uint(32)).copy()))
        return cls(rows, N, default_levels(N), rate)


def row_budget(N, rate):
    return int(math.ceil(rate * N))


def _encode_row(x, levels, max_bits):
    peak = float(np.max(np.abs(x)))
    scale = float(np.float32(peak))
    if scale == 0.0:
        return CodedRow(0.0, 0, np.zeros(0, dtype=np.uint8))
    c = dwt_haar(x / scale, levels)
    cmax = float(np.max(np.abs(c)))
    if cmax == 0.0:
        return CodedRow(0.0, 0, np.zeros(0, dtype=np.uint8))
    n0 = math.floor(math.log2(cmax))
    bits, _ = _spiht(x.size, levels, n0, max_bits, coeffs=c)
    return CodedRow(scale, n0, bits)


def _decode_row(row: CodedRow, N, levels, max_bits=None):
    if row.scale == 0.0:
        return np.zeros(N)
    limit = row.bits.size if max_bits is None else min(max_bits, row.bits.size)
    _, c = _spiht(N, levels, row.n0, limit, bits=row.bits[:limit])
    return idwt_haar(c, levels) * row.scale


def encode_moments(G, rate=DEFAULT_RATE, levels=None):
    """Code each row of G independently within ceil(rate * N) bits."""
    if rate <= 0:
        raise ValueError("moment rate must be positive")
    G = np.atleast_2d(np.asarray(G, dtype=float))
    N = G.shape[1]
    levels = default_levels(N) if levels is None else levels
    budget = row_budget(N, rate)
    return CodedMoments([_encode_row(x, levels, budget) for x in G], N, levels, rate)


def decode_moments(cm: CodedMoments, N=None, max_bits=None):
    """Rows from the coded streams, optionally reading only ``max_bits`` of each."""
    N = cm.N if N is None else N
    if N != cm.N:
        raise ValueError(f"streams describe {cm.N} samples, not {N}")
    if not cm.rows:
        return np.zeros((0, N))
    return np.stack([_decode_row(r, N, cm.levels, max_bits) for r in cm.rows])
