"""Average referencing with quantised per-sample means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ReferencedBlock:
    data: np.ndarray            # (M, N), block minus quantised means
    quantized_means: np.ndarray  # (N,)
    mean_bits: int
    mean_min: float
    mean_max: float
    codes: np.ndarray           # (N,) quantiser indices

    @property
    def step(self):
        return quantizer_step(self.mean_min, self.mean_max, self.mean_bits)

    @property
    def overhead_bits(self):
        return self.codes.size * self.mean_bits + 2 * 64


def quantizer_step(lo, hi, bits):
    return (hi - lo) / (1 << bits)


def quantize_means(mu, bits):
    """Uniform mid-rise quantiser over [min(mu), max(mu)]; returns (codes, lo, hi)."""
    lo, hi = float(mu.min()), float(mu.max())
    step = quantizer_step(lo, hi, bits)
    if step == 0.0:
        return np.zeros(mu.size, dtype=np.int64), lo, hi
    codes = np.floor((mu - lo) / step).astype(np.int64)
    return np.clip(codes, 0, (1 << bits) - 1), lo, hi


def dequantize_means(codes, lo, hi, bits):
    step = quantizer_step(lo, hi, bits)
    if step == 0.0:
        return np.full(codes.size, lo)
    return lo + (codes + 0.5) * step


def average_reference(block, mean_bits=16):
    block = np.asarray(block, dtype=float)
    if block.ndim != 2 or block.size == 0:
        raise ValueError("average_reference needs a non-empty (M, N) block")
    if mean_bits < 1:
        raise ValueError("mean_bits must be at least 1")
    mu = block.mean(axis=0)
    codes, lo, hi = quantize_means(mu, mean_bits)
    mu_hat = dequantize_means(codes, lo, hi, mean_bits)
    return ReferencedBlock(block - mu_hat, mu_hat, mean_bits, lo, hi, codes)


def de_reference(ref: ReferencedBlock):
    return ref.data + ref.quantized_means[None, :]
