"""Block encoder/decoder and the DPZ1 file container.

A block is average referenced, explained by a grid dipole whose moments are
wavelet coded, and the integer residual left after rounding the decoded
model is coded either with the DCT bit-plane coder (smooth residuals) or the
cluster/ARX coder (rough residuals).
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import arx, dct_codec, moments
from .bitio import BitReader, BitWriter, TruncatedStream, uint_bits
from .fitting import DipoleFit, fit_block, referenced_leadfield
from .geometry import CONCENTRIC, SINGLE_SPHERE, ElectrodeArray, HeadModel, build_grid
from .leadfield import ForwardModel
from .reference import average_reference, dequantize_means

MAGIC = b"DPZ1"
DCT, ARX = 0, 1
MODE_NAMES = {DCT: "DCT", ARX: "ARX"}
RHO_CAP = 1e6
RHO_FLOOR = 1e-12
LEADFIELD_SCALE = 1e-3           # uV per nA*m, from V per A*m
BLOCK_PREFIX_BITS = 32


class CodecError(ValueError):
    pass


class DigestMismatch(CodecError):
    pass


def default_block_length(fs):
    return 1024 if fs >= 256 else 256


@dataclass
class Config:
    electrodes: ElectrodeArray
    head: HeadModel = field(default_factory=HeadModel.four_shell)
    grid_size: int = 181
    n_dipoles: int = 1
    tau: float = 10.0
    mean_bits: int = 16
    moment_rate: float = moments.DEFAULT_RATE
    num_clusters: int = 5
    n_centroids: int = 2
    seed: int = 0
    scale: float = LEADFIELD_SCALE

    @cached_property
    def model(self):
        grid = build_grid(self.head, self.grid_size)
        return ForwardModel(self.head, self.electrodes, grid, self.scale)

    @property
    def digest(self):
        return self.model.digest

    @property
    def M(self):
        return len(self.electrodes)

    def clusters_for(self, M):
        """Cluster count, reduced when the montage is too small for the default."""
        K = min(self.num_clusters, M // self.n_centroids)
        if K < 1:
            raise CodecError(f"{M} channels cannot hold {self.n_centroids} centroids")
        return K


def smoothness(E):
    """Mean over channels of low-quarter to upper-three-quarter DCT magnitude sums."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    N = E.shape[1]
    if N % 4:
        raise CodecError("smoothness needs N divisible by 4")
    D = np.abs(dct_codec.dct_channel(E))
    low = D[:, :N // 4].sum(axis=1)
    high = D[:, N // 4:].sum(axis=1)
    safe = np.where(high < RHO_FLOOR, 1.0, high)
    ratio = np.where(high < RHO_FLOOR, RHO_CAP, np.minimum(low / safe, RHO_CAP))
    return float(ratio.mean())


@dataclass
class SmoothnessReport:
    rho: float
    threshold: float

    @property
    def mode(self):
        return DCT if self.rho >= self.threshold else ARX


def prd(original, decoded):
    """Percent root-mean-square difference; NaN when the original has no energy."""
    s = np.asarray(original, dtype=float)
    d = np.asarray(decoded, dtype=float)
    energy = float(np.sum(s * s))
    if energy == 0.0:
        return float("nan")
    return math.sqrt(float(np.sum((s - d) ** 2)) / energy) * 100.0


def mean_prd(original, decoded, N):
    """Mean PRD over channels and blocks, skipping zero-energy segments."""
    s = np.asarray(original, dtype=float)
    d = np.asarray(decoded, dtype=float)
    vals = []
    for start in range(0, s.shape[1], N):
        for l in range(s.shape[0]):
            v = prd(s[l, start:start + N], d[l, start:start + N])
            if not math.isnan(v):
                vals.append(v)
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------- one block

@dataclass
class BlockAnalysis:
    """Everything about a block that does not depend on the bit budget."""
    samples: np.ndarray
    mean_codes: np.ndarray
    mean_lo: float
    mean_hi: float
    fit: DipoleFit
    coded_moments: moments.CodedMoments
    model_part: np.ndarray           # round(mu_hat + K G_hat)
    residual: np.ndarray             # integer-valued
    smooth: SmoothnessReport
    planes: tuple | None = None
    cmap: arx.ClusterMap | None = None


@dataclass
class EncodedBlock:
    mode: int
    mean_codes: np.ndarray
    mean_lo: float
    mean_hi: float
    positions: tuple
    coded_moments: moments.CodedMoments
    residual: object                 # DctPlaneStream or ArxBlockCode
    digest: int
    rho: float = float("nan")
    parts: dict = field(default_factory=dict)


def _fixed_bits(cfg: Config, N, cm: moments.CodedMoments):
    return (1 + 128 + N * cfg.mean_bits
            + cfg.n_dipoles * uint_bits(len(cfg.model.grid)) + cm.nbits)


def model_potentials(cfg: Config, positions, G_hat, mu_hat):
    K = referenced_leadfield(cfg.model, positions)
    return np.round(mu_hat[None, :] + K @ G_hat)


def analyze_block(s, cfg: Config):
    s = np.asarray(s, dtype=float)
    M, N = s.shape
    if M != cfg.M:
        raise CodecError(f"block has {M} channels, configuration has {cfg.M}")
    ref = average_reference(s, cfg.mean_bits)
    fit = fit_block(ref.data, cfg.model, cfg.n_dipoles)
    cm = moments.encode_moments(fit.moments, cfg.moment_rate)
    G_hat = moments.decode_moments(cm)
    part = model_potentials(cfg, fit.positions, G_hat, ref.quantized_means)
    e = s - part
    rep = SmoothnessReport(smoothness(e), cfg.tau)
    a = BlockAnalysis(s, ref.codes, ref.mean_min, ref.mean_max, fit, cm, part, e, rep)
    if rep.mode == DCT:
        a.planes = dct_codec.full_plane_bits(e)
    else:
        a.cmap = arx.cluster_channels(e, cfg.clusters_for(M), cfg.n_centroids, cfg.seed)
    return a


def code_block(a: BlockAnalysis, cfg: Config, budget_bits=None):
    """Entropy-code an analysed block; returns (EncodedBlock, reconstruction)."""
    M, N = a.samples.shape
    fixed = _fixed_bits(cfg, N, a.coded_moments)
    R = None if budget_bits is None else max(int(budget_bits) - fixed, 0)
    mode = a.smooth.mode
    if mode == DCT:
        stream = dct_codec.encode_residual(a.residual, R, planes=a.planes)
        e_hat = stream.decode()
    else:
        if R is None:
            b, cent = arx.MAX_INNOVATION_BITS, None
        else:
            b, cent = arx.allocate(R, M, N, a.cmap)
        stream, e_hat = arx.encode_arx(a.residual, a.cmap, b, cent)
    blk = EncodedBlock(mode, a.mean_codes, a.mean_lo, a.mean_hi, a.fit.positions,
                       a.coded_moments, stream, cfg.digest, a.smooth.rho)
    return blk, a.model_part + e_hat


def encode_block(s, cfg: Config, budget_bits=None):
    return code_block(analyze_block(s, cfg), cfg, budget_bits)


def decode_block(blk: EncodedBlock, cfg: Config, N):
    if blk.digest != cfg.digest:
        raise DigestMismatch("block was encoded with a different head/electrode/grid model")
    mu_hat = dequantize_means(blk.mean_codes, blk.mean_lo, blk.mean_hi, cfg.mean_bits)
    G_hat = moments.decode_moments(blk.coded_moments, N)
    part = model_potentials(cfg, blk.positions, G_hat, mu_hat)
    if blk.mode == DCT:
        e_hat = blk.residual.decode()
    else:
        e_hat = arx.decode_arx(blk.residual, cfg.M, N)
    return part + e_hat


def write_block(blk: EncodedBlock, cfg: Config):
    """Bit-level block body; ``blk.parts`` receives the per-field bit counts."""
    w = BitWriter()
    parts = {}

    def mark(name, start):
        parts[name] = w.nbits - start

    start = w.nbits
    w.write_uint(blk.mode, 1)
    mark("mode", start)
    start = w.nbits
    w.write_f64(blk.mean_lo)
    w.write_f64(blk.mean_hi)
    for c in blk.mean_codes:
        w.write_uint(int(c), cfg.mean_bits)
    mark("means", start)
    start = w.nbits
    for p in blk.positions:
        w.write_uint(p, uint_bits(len(cfg.model.grid)))
    mark("positions", start)
    start = w.nbits
    blk.coded_moments.write(w)
    mark("moments", start)
    start = w.nbits
    blk.residual.write(w)
    mark("residual", start)
    parts["padding"] = -w.nbits % 8
    blk.parts = parts
    return w.to_bytes()


def read_block(data, cfg: Config, N):
    r = BitReader(data)
    mode = r.read_uint(1)
    lo, hi = r.read_f64(), r.read_f64()
    codes = np.array([r.read_uint(cfg.mean_bits) for _ in range(N)], dtype=np.int64)
    P = len(cfg.model.grid)
    positions = tuple(r.read_uint(uint_bits(P)) for _ in range(cfg.n_dipoles))
    if any(p >= P for p in positions):
        raise CodecError("grid index outside the grid")
    cm = moments.CodedMoments.read(r, 3 * cfg.n_dipoles, N, cfg.moment_rate)
    if mode == DCT:
        res = dct_codec.DctPlaneStream.read(r)
        if (res.M, res.N) != (cfg.M, N):
            raise CodecError("residual stream shape does not match the header")
    else:
        res = arx.ArxBlockCode.read(r, cfg.M, N)
    if r.remaining >= 8:
        raise CodecError("trailing data after block")
    return EncodedBlock(mode, codes, lo, hi, positions, cm, res, cfg.digest)


def truncate_block(data, cfg: Config, N, fraction):
    """Re-terminate a block's embedded residual stream at ``fraction`` of its bits."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    blk = read_block(data, cfg, N)
    if blk.mode == DCT:
        keep = int(blk.residual.nbits * fraction)
        blk.residual = dct_codec.retruncate(blk.residual, keep)
    else:
        cent = blk.residual.centroids
        blk.residual.centroids = dct_codec.retruncate(cent, int(cent.nbits * fraction))
    return write_block(blk, cfg)


# ---------------------------------------------------------------- container

_HEAD_IDS = {SINGLE_SPHERE: 0, CONCENTRIC: 1}
_HEAD_KINDS = {v: k for k, v in _HEAD_IDS.items()}
_FIXED = struct.Struct("<HHdIBHBdIBBHfdB")


def header_bytes(cfg: Config, N, fs, T, n_blocks):
    out = bytearray(_FIXED.pack(cfg.M, N, fs, T, cfg.mean_bits, cfg.grid_size,
                                _HEAD_IDS[cfg.head.kind], cfg.tau, n_blocks,
                                cfg.num_clusters, cfg.n_centroids, cfg.seed & 0xFFFF,
                                cfg.moment_rate, cfg.scale, cfg.n_dipoles))
    out.append(len(cfg.head.shells))
    for r, s in cfg.head.shells:
        out += struct.pack("<dd", r, s)
    for lab in cfg.electrodes.labels:
        raw = lab.encode("utf-8")
        out.append(len(raw))
        out += raw
    out += np.ascontiguousarray(cfg.electrodes.positions, dtype="<f8").tobytes()
    return bytes(out)


def container_digest(cfg: Config, header):
    h = hashlib.blake2b(digest_size=8)
    h.update(cfg.digest.to_bytes(8, "little"))
    h.update(header)
    return h.digest()


@dataclass
class Stream:
    """Parsed container: configuration, geometry of the recording, block bodies."""
    cfg: Config
    N: int
    fs: float
    T: int
    blocks: list
    labels: tuple = ()

    def to_bytes(self):
        n = len(self.blocks)
        hdr = header_bytes(self.cfg, self.N, self.fs, self.T, n)
        out = bytearray(MAGIC + container_digest(self.cfg, hdr) + struct.pack("<I", len(hdr)) + hdr)
        for b in self.blocks:
            out += struct.pack("<I", len(b)) + b
        return bytes(out)


def parse_header(data):
    if data[:4] != MAGIC:
        raise CodecError("not a DPZ1 stream")
    try:
        digest = data[4:12]
        (hlen,) = struct.unpack_from("<I", data, 12)
        hdr = data[16:16 + hlen]
        if len(hdr) != hlen:
            raise TruncatedStream("header cut short")
        (M, N, fs, T, mean_bits, grid_size, head_id, tau, n_blocks, K, Nc, seed,
         mrate, scale, n_d) = _FIXED.unpack_from(hdr, 0)
        pos = _FIXED.size
        n_shells = hdr[pos]
        pos += 1
        shells = []
        for _ in range(n_shells):
            shells.append(struct.unpack_from("<dd", hdr, pos))
            pos += 16
        labels = []
        for _ in range(M):
            ln = hdr[pos]
            labels.append(hdr[pos + 1:pos + 1 + ln].decode("utf-8"))
            pos += 1 + ln
        xyz = np.frombuffer(hdr[pos:pos + 24 * M], dtype="<f8").reshape(M, 3)
        if xyz.shape[0] != M or pos + 24 * M != hlen:
            raise CodecError("malformed global header")
    except (struct.error, IndexError, ValueError) as exc:
        if isinstance(exc, CodecError):
            raise
        raise TruncatedStream(f"global header is truncated: {exc}") from None
    cfg = Config(ElectrodeArray(xyz.copy(), tuple(labels)),
                 HeadModel(tuple(shells), _HEAD_KINDS[head_id]), grid_size, n_d, tau,
                 mean_bits, mrate, K, Nc, seed, scale)
    if container_digest(cfg, bytes(hdr)) != digest:
        raise DigestMismatch("stream digest does not match the rebuilt configuration")
    return cfg, N, fs, T, n_blocks, 16 + hlen


def parse(data):
    cfg, N, fs, T, n_blocks, pos = parse_header(data)
    blocks = []
    for _ in range(n_blocks):
        if pos + 4 > len(data):
            raise TruncatedStream("block length prefix missing")
        (ln,) = struct.unpack_from("<I", data, pos)
        body = data[pos + 4:pos + 4 + ln]
        if len(body) != ln:
            raise TruncatedStream("block body cut short")
        blocks.append(bytes(body))
        pos += 4 + ln
    if pos != len(data):
        raise CodecError("trailing bytes after the last block")
    return Stream(cfg, N, fs, T, blocks, cfg.electrodes.labels)


# ---------------------------------------------------------------- recordings

def split_blocks(samples, N):
    """Blocks of N samples; the tail is padded by repeating the last sample."""
    samples = np.asarray(samples, dtype=float)
    M, T = samples.shape
    n = max(1, -(-T // N))
    padded = np.empty((M, n * N))
    padded[:, :T] = samples
    padded[:, T:] = samples[:, -1:] if T else 0.0
    return [padded[:, k * N:(k + 1) * N] for k in range(n)]


def block_budget(cfg: Config, N, rate, header_len, n_blocks):
    """Total bits one block may spend for an overall ``rate`` in bits per sample."""
    shared = 8 * (16 + header_len) + n_blocks * (BLOCK_PREFIX_BITS + 7)
    return rate * cfg.M * N - shared / n_blocks


@dataclass
class EncodeResult:
    data: bytes
    reconstruction: np.ndarray
    modes: list
    rhos: list
    report: dict


def encode_recording(samples, fs, cfg: Config, rate=None, N=None, analyses=None):
    """Encode an (M, T) recording; ``rate`` None codes every residual to T = 1."""
    samples = np.asarray(samples, dtype=float)
    M, T = samples.shape
    N = default_block_length(fs) if N is None else int(N)
    if N % 8:
        raise CodecError("block length must be a multiple of 8")
    blocks = split_blocks(samples, N)
    if analyses is None:
        analyses = [analyze_block(b, cfg) for b in blocks]
    hdr = header_bytes(cfg, N, fs, T, len(blocks))
    budget = None if rate is None else block_budget(cfg, N, rate, len(hdr), len(blocks))
    bodies, recon, modes, rhos = [], [], [], []
    report = {"global": 8 * (16 + len(hdr)), "prefix": 0}
    for a in analyses:
        blk, rec = code_block(a, cfg, budget)
        bodies.append(write_block(blk, cfg))
        for k, v in blk.parts.items():
            report[k] = report.get(k, 0) + v
        report["prefix"] += BLOCK_PREFIX_BITS
        recon.append(rec)
        modes.append(blk.mode)
        rhos.append(blk.rho)
    data = Stream(cfg, N, fs, T, bodies).to_bytes()
    recon = np.concatenate(recon, axis=1)[:, :T]
    return EncodeResult(data, recon, modes, rhos, report)


def decode_recording(data):
    """Decode a container; returns (samples, fs, labels, modes)."""
    st = parse(data)
    out, modes = [], []
    for body in st.blocks:
        blk = read_block(body, st.cfg, st.N)
        modes.append(blk.mode)
        out.append(decode_block(blk, st.cfg, st.N))
    samples = np.concatenate(out, axis=1)[:, :st.T] if out else np.zeros((st.cfg.M, 0))
    return samples, st.fs, st.labels, modes
