"""Cluster-and-predict residual coding.

Channels are grouped by k-medoids on their L2 distances.  Each cluster's
centroid channels are coded with the DCT coder; every other channel is
predicted as a weighted sum of its cluster's *decoded* centroids (one tap,
no lag), and the prediction error is scalar quantised with a Lloyd-Max
codebook shared by the block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dct_codec
from .bitio import BitReader, BitWriter, uint_bits
from .fitting import pseudo_inverse

WEIGHT_BITS = 4
MAX_INNOVATION_BITS = 12
LLOYD_MAX_ITER = 100
LLOYD_RTOL = 1e-6
KMEDOID_MAX_ITER = 50


class ArxError(ValueError):
    pass


# ---------------------------------------------------------------- Lloyd-Max

@dataclass
class Codebook:
    levels: np.ndarray                     # ascending, float32-representable
    history: list = field(default_factory=list, compare=False)

    @property
    def thresholds(self):
        lv = self.levels.astype(float)
        return 0.5 * (lv[1:] + lv[:-1])

    @property
    def index_bits(self):
        return uint_bits(self.levels.size)

    @property
    def nbits(self):
        return 16 + 32 * self.levels.size

    def quantize(self, x):
        return np.searchsorted(self.thresholds, np.asarray(x, dtype=float), side="right")

    def value(self, idx):
        return self.levels.astype(float)[idx]

    def write(self, w: BitWriter):
        w.write_uint(self.levels.size, 16)
        for v in self.levels:
            w.write_f32(float(v))

    @classmethod
    def read(cls, r: BitReader):
        n = r.read_uint(16)
        if n == 0:
            raise ArxError("codebook with no levels")
        levels = np.array([r.read_f32() for _ in range(n)], dtype=np.float32)
        if np.any(np.diff(levels) < 0) or not np.all(np.isfinite(levels)):
            raise ArxError("malformed codebook levels")
        return cls(levels)


def _distortion(x, levels):
    th = 0.5 * (levels[1:] + levels[:-1])
    q = levels[np.searchsorted(th, x, side="right")]
    return float(np.mean((x - q) ** 2))


def lloyd_max(samples, bits):
    """Lloyd iteration from a uniform start over [min, max].

    Stops when the relative distortion change drops below 1e-6 or after
    100 iterations; ``history`` holds the distortion after every update.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ArxError("lloyd_max needs samples")
    if not 1 <= bits <= MAX_INNOVATION_BITS:
        raise ArxError(f"bits must be in [1, {MAX_INNOVATION_BITS}]")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return Codebook(np.array([lo], dtype=np.float32), [0.0])
    L = 1 << bits
    levels = lo + (np.arange(L) + 0.5) * (hi - lo) / L
    history = [_distortion(x, levels)]
    for _ in range(LLOYD_MAX_ITER):
        th = 0.5 * (levels[1:] + levels[:-1])
        cell = np.searchsorted(th, x, side="right")
        sums = np.bincount(cell, weights=x, minlength=L)
        counts = np.bincount(cell, minlength=L)
        filled = counts > 0
        levels = levels.copy()
        levels[filled] = sums[filled] / counts[filled]
        history.append(_distortion(x, levels))
        prev, cur = history[-2], history[-1]
        if prev == 0 or abs(prev - cur) <= LLOYD_RTOL * prev:
            break
    return Codebook(np.unique(levels.astype(np.float32)), history)


# ---------------------------------------------------------------- clustering

@dataclass
class ClusterMap:
    assignments: np.ndarray          # (M,) cluster id per channel
    centroids: list                  # per cluster, N_c channel indices
    seed: int = 0
    history: list = field(default_factory=list, compare=False)

    @property
    def num_clusters(self):
        return len(self.centroids)

    @property
    def n_centroids(self):
        return len(self.centroids[0]) if self.centroids else 0

    @property
    def centroid_channels(self):
        return [c for group in self.centroids for c in group]

    @property
    def predicted_channels(self):
        used = set(self.centroid_channels)
        return [l for l in range(self.assignments.size) if l not in used]

    def nbits(self, M):
        K, Nc = self.num_clusters, self.n_centroids
        return 8 + 8 + 16 + M * uint_bits(K) + K * Nc * uint_bits(M)

    def write(self, w: BitWriter):
        K, M = self.num_clusters, self.assignments.size
        w.write_uint(K, 8)
        w.write_uint(self.n_centroids, 8)
        w.write_uint(self.seed & 0xFFFF, 16)
        for a in self.assignments:
            w.write_uint(int(a), uint_bits(K))
        for c in self.centroid_channels:
            w.write_uint(c, uint_bits(M))

    @classmethod
    def read(cls, r: BitReader, M):
        K = r.read_uint(8)
        Nc = r.read_uint(8)
        seed = r.read_uint(16)
        if K == 0 or Nc == 0:
            raise ArxError("cluster map without clusters")
        assign = np.array([r.read_uint(uint_bits(K)) for _ in range(M)], dtype=int)
        flat = [r.read_uint(uint_bits(M)) for _ in range(K * Nc)]
        cmap = cls(assign, [flat[k * Nc:(k + 1) * Nc] for k in range(K)], seed)
        cmap.validate()
        return cmap

    def validate(self):
        M = self.assignments.size
        flat = self.centroid_channels
        if len(set(flat)) != len(flat) or any(not 0 <= c < M for c in flat):
            raise ArxError("centroid channels must be distinct and in range")
        for k, group in enumerate(self.centroids):
            if any(self.assignments[c] != k for c in group):
                raise ArxError("a centroid lies outside its own cluster")
        if np.any(self.assignments >= self.num_clusters) or np.any(self.assignments < 0):
            raise ArxError("cluster id out of range")


def _pairwise(E):
    sq = np.sum(E * E, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (E @ E.T)
    d = np.sqrt(np.maximum(d2, 0.0))
    np.fill_diagonal(d, 0.0)
    return d


def _objective(dist, medoids, assign):
    return float(sum(dist[l, medoids[a]] for l, a in enumerate(assign)))


def cluster_channels(E, num_clusters, n_centroids, seed=0):
    """k-medoids on channel L2 distances, then N_c centroids per cluster."""
    E = np.asarray(E, dtype=float)
    M = E.shape[0]
    K, Nc = int(num_clusters), int(n_centroids)
    if K < 1 or Nc < 1 or K * Nc > M:
        raise ArxError(f"cannot form {K} clusters of {Nc} centroids from {M} channels")
    dist = _pairwise(E)
    rng = np.random.default_rng(seed)
    medoids = [int(m) for m in rng.choice(M, size=K, replace=False)]
    history = []
    assign = None
    for _ in range(KMEDOID_MAX_ITER):
        assign = np.argmin(dist[:, medoids], axis=1)
        assign[medoids] = np.arange(K)
        history.append(_objective(dist, medoids, assign))
        new = []
        for k in range(K):
            members = np.flatnonzero(assign == k)
            cost = dist[np.ix_(members, members)].sum(axis=1)
            new.append(int(members[np.argmin(cost)]))
        if len(set(new)) < K:
            new = _reseed(dist, new)
        if new == medoids:
            break
        medoids = new
    assign = np.argmin(dist[:, medoids], axis=1)
    assign[medoids] = np.arange(K)
    history.append(_objective(dist, medoids, assign))
    assign = _rebalance(dist, assign, medoids, Nc)
    centroids = []
    for k in range(K):
        members = [int(m) for m in np.flatnonzero(assign == k)]
        chosen = [medoids[k]]
        while len(chosen) < Nc:
            rest = [m for m in members if m not in chosen]
            cost = [dist[m, members].sum() for m in rest]
            chosen.append(rest[int(np.argmin(cost))])
        centroids.append(chosen)
    cmap = ClusterMap(assign.astype(int), centroids, seed, history)
    cmap.validate()
    return cmap


def _reseed(dist, medoids):
    """Replace duplicate medoids by the channel farthest from its nearest medoid."""
    out = []
    for m in medoids:
        if m in out:
            near = dist[:, out].min(axis=1)
            near[out] = -1.0
            m = int(np.argmax(near))
        out.append(m)
    return out


def _rebalance(dist, assign, medoids, Nc):
    """Move nearest non-medoid channels into clusters holding fewer than Nc members."""
    assign = assign.copy()
    K = len(medoids)
    while True:
        sizes = np.bincount(assign, minlength=K)
        short = np.flatnonzero(sizes < Nc)
        if short.size == 0:
            return assign
        k = int(short[0])
        donors = [l for l in range(assign.size)
                  if l not in medoids and sizes[assign[l]] > Nc]
        pick = min(donors, key=lambda l: (dist[l, medoids[k]], l))
        assign[pick] = k


# ---------------------------------------------------------------- prediction

def arx_fit(target, inputs):
    """Minimum-norm least-squares one-tap weights: w = X+ e with X = inputs^T."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float)).T
    return pseudo_inverse(X) @ np.asarray(target, dtype=float)


def predict(weights, inputs):
    out = np.zeros(inputs.shape[1])
    for w, x in zip(weights, inputs):
        out = out + float(w) * x
    return out


@dataclass
class ArxBlockCode:
    cmap: ClusterMap
    centroids: dct_codec.DctPlaneStream
    weight_book: Codebook | None
    weight_idx: np.ndarray          # (n_predicted, N_c)
    innovation_bits: int
    innovation_book: Codebook | None
    innovation_idx: np.ndarray      # (n_predicted, N)

    def write(self, w: BitWriter):
        self.cmap.write(w)
        self.centroids.write(w)
        if self.weight_book is not None:
            self.weight_book.write(w)
            for i in self.weight_idx.ravel():
                w.write_uint(int(i), self.weight_book.index_bits)
        w.write_uint(self.innovation_bits, 4)
        if self.innovation_book is not None:
            self.innovation_book.write(w)
            nb = self.innovation_book.index_bits
            if nb:
                w.write_bits(_index_bits(self.innovation_idx.ravel(), nb))

    @classmethod
    def read(cls, r: BitReader, M, N):
        cmap = ClusterMap.read(r, M)
        cent = dct_codec.DctPlaneStream.read(r)
        if (cent.M, cent.N) != (len(cmap.centroid_channels), N):
            raise ArxError("centroid stream shape does not match the cluster map")
        n_pred = len(cmap.predicted_channels)
        wbook, widx = None, np.zeros((0, cmap.n_centroids), dtype=int)
        if n_pred:
            wbook = Codebook.read(r)
            widx = np.array([r.read_uint(wbook.index_bits)
                             for _ in range(n_pred * cmap.n_centroids)], dtype=int)
            widx = widx.reshape(n_pred, cmap.n_centroids)
            if np.any(widx >= wbook.levels.size):
                raise ArxError("weight index outside its codebook")
        b = r.read_uint(4)
        ibook, iidx = None, np.zeros((n_pred, N), dtype=int)
        if b and n_pred:
            ibook = Codebook.read(r)
            nb = ibook.index_bits
            if nb:
                iidx = _bits_index(r.read_bits(n_pred * N * nb), nb).reshape(n_pred, N)
            if np.any(iidx >= ibook.levels.size):
                raise ArxError("innovation index outside its codebook")
        return cls(cmap, cent, wbook, widx, b, ibook, iidx)


def _index_bits(idx, nb):
    idx = np.asarray(idx, dtype=np.int64)
    return ((idx[:, None] >> np.arange(nb)) & 1).astype(np.uint8).ravel()


def _bits_index(bits, nb):
    return (bits.reshape(-1, nb).astype(np.int64) << np.arange(nb)).sum(axis=1)


def overhead_bits(M, N, cmap: ClusterMap, innovation_bits, n_weight_levels=1 << WEIGHT_BITS):
    """Bits of everything except the centroid stream payload."""
    n_pred = len(cmap.predicted_channels)
    bits = cmap.nbits(M) + dct_codec.HEADER_BITS + dct_codec.BODY_HEADER_BITS + 4
    if n_pred:
        bits += 16 + 32 * n_weight_levels + n_pred * cmap.n_centroids * WEIGHT_BITS
        if innovation_bits:
            bits += 16 + 32 * (1 << innovation_bits) + n_pred * N * innovation_bits
    return bits


def allocate(R, M, N, cmap: ClusterMap):
    """Split a residual budget R into (innovation bits, centroid stream budget).

    The innovation depth is the largest b that leaves every centroid sample
    b + 1 bits; centroids then get up to b + 2 bits per sample, so both
    shares are non-decreasing in R.
    """
    n_cent = len(cmap.centroid_channels)
    stream_header = dct_codec.HEADER_BITS + dct_codec.BODY_HEADER_BITS
    if not cmap.predicted_channels:
        return 0, max(R - overhead_bits(M, N, cmap, 0), 0) + stream_header
    b = 0
    for cand in range(1, MAX_INNOVATION_BITS + 1):
        if R - overhead_bits(M, N, cmap, cand) < n_cent * N * (cand + 1):
            break
        b = cand
    cent = min(R - overhead_bits(M, N, cmap, b), n_cent * N * (b + 2))
    return b, max(cent, 0) + stream_header


def encode_arx(E, cmap: ClusterMap, innovation_bits, dct_budget):
    """Closed-loop ARX coding; returns (code, encoder-side reconstruction)."""
    E = np.asarray(E, dtype=float)
    M, N = E.shape
    cent_ch = cmap.centroid_channels
    cent = dct_codec.encode_residual(E[cent_ch], dct_budget)
    cent_hat = cent.decode()
    pred_ch = cmap.predicted_channels
    Nc = cmap.n_centroids
    inputs = {}
    for k, group in enumerate(cmap.centroids):
        rows = [cent_ch.index(c) for c in group]
        inputs[k] = cent_hat[rows]
    raw_w = np.array([arx_fit(E[l], inputs[cmap.assignments[l]]) for l in pred_ch])
    wbook, widx = None, np.zeros((0, Nc), dtype=int)
    preds = np.zeros((len(pred_ch), N))
    if pred_ch:
        wbook = lloyd_max(raw_w, WEIGHT_BITS) if np.ptp(raw_w) > 0 else \
            Codebook(np.array([raw_w.ravel()[0]], dtype=np.float32))
        widx = wbook.quantize(raw_w).reshape(len(pred_ch), Nc)
        for j, l in enumerate(pred_ch):
            preds[j] = predict(wbook.value(widx[j]), inputs[cmap.assignments[l]])
    b = int(innovation_bits) if pred_ch else 0
    ibook, iidx = None, np.zeros((len(pred_ch), N), dtype=int)
    if b:
        y = E[pred_ch] - preds
        ibook = lloyd_max(y, b)
        iidx = ibook.quantize(y).reshape(len(pred_ch), N)
    code = ArxBlockCode(cmap, cent, wbook, widx, b, ibook, iidx)
    return code, _assemble(code, cent_hat, preds, M, N)


def _assemble(code: ArxBlockCode, cent_hat, preds, M, N):
    out = np.zeros((M, N))
    out[code.cmap.centroid_channels] = cent_hat
    pred_ch = code.cmap.predicted_channels
    if pred_ch:
        innov = code.innovation_book.value(code.innovation_idx) if code.innovation_book \
            else np.zeros((len(pred_ch), N))
        out[pred_ch] = preds + innov
    return out


def decode_arx(code: ArxBlockCode, M, N):
    cmap = code.cmap
    cent_ch = cmap.centroid_channels
    cent_hat = code.centroids.decode()
    pred_ch = cmap.predicted_channels
    preds = np.zeros((len(pred_ch), N))
    for j, l in enumerate(pred_ch):
        k = cmap.assignments[l]
        rows = [cent_ch.index(c) for c in cmap.centroids[k]]
        preds[j] = predict(code.weight_book.value(code.weight_idx[j]), cent_hat[rows])
    return _assemble(code, cent_hat, preds, M, N)
