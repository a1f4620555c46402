"""Deterministic synthetic EEG corpora."""
from __future__ import annotations

import numpy as np

from .geometry import HeadModel, build_grid, electrodes_from_labels, montage_for
from .leadfield import ForwardModel
from .pipeline import LEADFIELD_SCALE
from .recording import Recording, to_int16

KINDS = ("dipole_exact", "erp_like", "noise_like")
PEAK_UV = 2000.0
BACKGROUND_UV = 20.0
NOISE_UV = 100.0


def smooth_moments(rng, N, fs, n_tones=4, f_lo=1.0, f_hi=15.0):
    """(3, N) sums of a few low-frequency tones with random phases."""
    t = np.arange(N) / fs
    G = np.zeros((3, N))
    for row in G:
        for _ in range(n_tones):
            f = rng.uniform(f_lo, f_hi)
            row += rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return G


def pink_noise(rng, M, T):
    """Unit-variance 1/f noise per row."""
    coef = rng.normal(size=(M, T // 2 + 1)) + 1j * rng.normal(size=(M, T // 2 + 1))
    f = np.arange(T // 2 + 1, dtype=float)
    f[0] = 1.0
    x = np.fft.irfft(coef / np.sqrt(f), n=T, axis=1)
    x -= x.mean(axis=1, keepdims=True)
    return x / x.std(axis=1, keepdims=True)


def dipole_signal(model: ForwardModel, rng, n_blocks, N, fs, peak=PEAK_UV):
    """Per block, one random grid dipole with smooth moments, scaled to ``peak`` uV."""
    out = []
    truth = []
    for _ in range(n_blocks):
        k = int(rng.integers(len(model.grid)))
        v = model.block(k) @ smooth_moments(rng, N, fs)
        v *= peak / np.max(np.abs(v))
        out.append(v)
        truth.append(k)
    return np.concatenate(out, axis=1), truth


def synth_corpus(kind, M=31, N=1024, fs=1000.0, seed=0, n_blocks=4, grid_size=181,
                 head=None):
    """Synthetic recording of ``n_blocks`` blocks of N samples."""
    if kind not in KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng(seed)
    labels = montage_for(M)
    T = n_blocks * N
    if kind == "noise_like":
        x = rng.normal(scale=NOISE_UV, size=(M, T))
        return Recording(to_int16(x), fs, labels)
    head = HeadModel.four_shell() if head is None else head
    model = ForwardModel(head, electrodes_from_labels(labels), build_grid(head, grid_size),
                         LEADFIELD_SCALE)
    x, _ = dipole_signal(model, rng, n_blocks, N, fs)
    if kind == "erp_like":
        x = x + BACKGROUND_UV * pink_noise(rng, M, T)
    return Recording(to_int16(x), fs, labels)
