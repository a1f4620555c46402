"""Recordings: CSV and EDF ingest/export and electrode lookup."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import (ElectrodeArray, GeometryError, bipolar_midpoints, electrodes_from_labels,
                       montage_for, parse_bipolar_label)

INT16_MIN, INT16_MAX = -32768, 32767
ANNOTATION_LABEL = "EDF Annotations"


class RecordingError(ValueError):
    pass


@dataclass
class Recording:
    samples: np.ndarray              # (M, T) integer counts
    fs: float
    labels: tuple
    montage: str = "referential"
    gain: np.ndarray = None          # physical units per count
    offset: np.ndarray = None
    physical_dim: str = "uV"

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise RecordingError("samples must be a (channels, time) matrix")
        if s.size and (not np.all(np.isfinite(s)) or np.any(s != np.round(s))):
            raise RecordingError("samples must be integers")
        if s.size and (s.min() < INT16_MIN or s.max() > INT16_MAX):
            raise RecordingError("samples exceed the signed 16-bit range")
        self.samples = s.astype(np.int64)
        self.labels = tuple(self.labels)
        if len(self.labels) != s.shape[0]:
            raise RecordingError("one label per channel required")
        if self.fs <= 0:
            raise RecordingError("sampling rate must be positive")
        M = s.shape[0]
        self.gain = np.ones(M) if self.gain is None else np.asarray(self.gain, dtype=float)
        self.offset = np.zeros(M) if self.offset is None else np.asarray(self.offset, dtype=float)

    @property
    def M(self):
        return self.samples.shape[0]

    @property
    def T(self):
        return self.samples.shape[1]

    def physical(self):
        return self.samples * self.gain[:, None] + self.offset[:, None]


def to_int16(x):
    return np.clip(np.round(np.asarray(x, dtype=float)), INT16_MIN, INT16_MAX).astype(np.int64)


def electrodes_for(rec: Recording):
    """Scalp positions for a recording's channels.

    Referential labels are looked up in the built-in table and bipolar
    labels ("Fp1-F7") are placed at pair midpoints.  Unknown labels fall
    back to the table positions of a montage with the same channel count.
    """
    labels = rec.labels
    pairs = [parse_bipolar_label(l) for l in labels]
    if labels and all(p is not None for p in pairs):
        names = sorted({x for p in pairs for x in p})
        base = electrodes_from_labels(names)
        arr = bipolar_midpoints(pairs, base)
        return ElectrodeArray(arr.positions, labels)
    try:
        return electrodes_from_labels(labels)
    except GeometryError:
        fallback = electrodes_from_labels(montage_for(len(labels)))
        return ElectrodeArray(fallback.positions, labels)


# ---------------------------------------------------------------- CSV

def read_csv(path, fs):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise RecordingError("empty CSV file")
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise RecordingError("CSV header row with channel labels is missing")
    data = []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise RecordingError(f"row {k} has {len(row)} cells, header has {len(header)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise RecordingError(f"non-numeric cell in row {k}") from None
    samples = np.array(data, dtype=float).T.reshape(len(header), -1)
    montage = "bipolar" if all("-" in h for h in header) else "referential"
    return Recording(samples, float(fs), header, montage)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_csv(rec: Recording, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rec.labels)
        w.writerows(rec.samples.T.tolist())


# ---------------------------------------------------------------- EDF

def _field(raw, name):
    text = raw.decode("ascii", errors="replace").strip()
    if not text:
        raise RecordingError(f"EDF header field {name!r} is empty")
    return text


def _number(raw, name, kind=float):
    text = _field(raw, name)
    try:
        return kind(text) if kind is float else int(float(text))
    except ValueError:
        raise RecordingError(f"EDF header field {name!r} is not numeric: {text!r}") from None


def read_edf(path):
    """Minimal EDF reader: 16-bit data records, annotation signals skipped."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 256:
        raise RecordingError("file too short for an EDF header")
    if data[:8] != b"0       ":
        raise RecordingError("not an EDF file (bad version field)")
    header_len = _number(data[184:192], "header bytes", int)
    n_records = _number(data[236:244], "number of records", int)
    duration = _number(data[244:252], "record duration")
    ns = _number(data[252:256], "number of signals", int)
    if ns < 1 or header_len != 256 * (ns + 1) or len(data) < header_len:
        raise RecordingError("EDF header length does not match the signal count")
    h = data[256:header_len]

    def column(offset, width):
        start = offset * ns
        return [h[start + i * width:start + (i + 1) * width] for i in range(ns)]

    widths = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32]
    offs = np.concatenate([[0], np.cumsum(widths)[:-1]])
    cols = [column(int(o), w) for o, w in zip(offs, widths)]
    labels = [c.decode("ascii", errors="replace").strip() for c in cols[0]]
    dims = [c.decode("ascii", errors="replace").strip() for c in cols[2]]
    pmin = [_number(c, "physical minimum") for c in cols[3]]
    pmax = [_number(c, "physical maximum") for c in cols[4]]
    dmin = [_number(c, "digital minimum") for c in cols[5]]
    dmax = [_number(c, "digital maximum") for c in cols[6]]
    nsamp = [_number(c, "samples per record", int) for c in cols[8]]
    if n_records < 0:
        n_records = (len(data) - header_len) // (2 * sum(nsamp))
    if len(data) < header_len + 2 * sum(nsamp) * n_records:
        raise RecordingError("EDF data records are truncated")
    raw = np.frombuffer(data, dtype="<i2", count=sum(nsamp) * n_records, offset=header_len)
    raw = raw.reshape(n_records, sum(nsamp))
    keep = [i for i, l in enumerate(labels) if l != ANNOTATION_LABEL]
    if not keep:
        raise RecordingError("EDF file holds no signals")
    if len({nsamp[i] for i in keep}) != 1:
        raise RecordingError("mixed sampling rates are not supported")
    starts = np.concatenate([[0], np.cumsum(nsamp)])
    samples = np.concatenate(
        [raw[:, starts[i]:starts[i + 1]].reshape(-1)[None, :] for i in keep], axis=0)
    gain, offset = [], []
    for i in keep:
        if dmax[i] == dmin[i]:
            raise RecordingError(f"signal {labels[i]!r} has an empty digital range")
        g = (pmax[i] - pmin[i]) / (dmax[i] - dmin[i])
        gain.append(g)
        offset.append(pmin[i] - g * dmin[i])
    fs = nsamp[keep[0]] / duration
    sel = [labels[i] for i in keep]
    montage = "bipolar" if all("-" in l for l in sel) else "referential"
    return Recording(samples, fs, sel, montage, np.array(gain), np.array(offset),
                     dims[keep[0]] or "uV")


def _fmt(value, width):
    """Most precise decimal text of ``value`` that fits the EDF field width."""
    value = float(value)
    if value.is_integer() and len(str(int(value))) <= width:
        return str(int(value)).ljust(width).encode("ascii")
    for digits in range(width, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= width:
            return text.ljust(width).encode("ascii")
    raise RecordingError(f"{value!r} does not fit an EDF field of width {width}")


def write_edf(rec: Recording, path):
    fs = rec.fs
    T = rec.T
    if float(fs).is_integer() and T % int(fs) == 0 and T:
        per_record, n_records, duration = int(fs), T // int(fs), 1.0
    else:
        per_record, n_records, duration = T, 1, T / fs
    M = rec.M
    hdr = bytearray()
    hdr += b"0       "
    hdr += b"X X X X".ljust(80)
    hdr += b"Startdate X X X X".ljust(80)
    hdr += b"01.01.00" + b"00.00.00"
    hdr += str(256 * (M + 1)).ljust(8).encode()
    hdr += b"".ljust(44)
    hdr += str(n_records).ljust(8).encode()
    hdr += _fmt(duration, 8)
    hdr += str(M).ljust(4).encode()
    pmin = rec.gain * INT16_MIN + rec.offset
    pmax = rec.gain * INT16_MAX + rec.offset
    for lab in rec.labels:
        hdr += lab.encode("ascii")[:16].ljust(16)
    hdr += b"".ljust(80) * M
    hdr += rec.physical_dim.encode("ascii")[:8].ljust(8) * M
    for v in pmin:
        hdr += _fmt(v, 8)
    for v in pmax:
        hdr += _fmt(v, 8)
    hdr += str(INT16_MIN).ljust(8).encode() * M
    hdr += str(INT16_MAX).ljust(8).encode() * M
    hdr += b"".ljust(80) * M
    hdr += str(per_record).ljust(8).encode() * M
    hdr += b"".ljust(32) * M
    body = rec.samples.astype("<i2").reshape(M, n_records, per_record).transpose(1, 0, 2)
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(body.tobytes())


def read_recording(path, fs=None):
    if str(path).lower().endswith(".edf"):
        return read_edf(path)
    if fs is None:
        raise RecordingError("CSV input needs a sampling rate (--fs)")
    return read_csv(path, fs)


def write_recording(rec: Recording, path):
    if str(path).lower().endswith(".edf"):
        write_edf(rec, path)
    else:
        write_csv(rec, path)
