"""Electrode positions, spherical head models and dipole sampling grids.

All coordinates are head-centred Cartesian in metres: x towards the right
ear, y towards the nasion, z through the vertex (Cz).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

SCALP_RADIUS = 0.092

# brain, csf, skull, scalp
FOUR_SHELL_RADII = (0.080, 0.081, 0.086, 0.092)
FOUR_SHELL_SIGMAS = (0.33, 1.0, 0.0042, 0.33)

GRID_MARGIN = 0.99
MAX_GRID_POINTS = 200_000

SINGLE_SPHERE = "single_sphere"
CONCENTRIC = "concentric_spheres"

# Common 10-20 aliases (old temporal nomenclature).
ALIASES = {"T3": "T7", "T4": "T8", "T5": "P7", "T6": "P8"}

_MONTAGE_19 = ["Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz",
               "C4", "T8", "P7", "P3", "Pz", "P4", "P8", "O1", "O2"]

MONTAGES = {
    "10-20-19": _MONTAGE_19,
    "10-20-21": _MONTAGE_19 + ["Fpz", "Oz"],
    "10-10-25": _MONTAGE_19 + ["FC1", "FC2", "CP1", "CP2", "FC5", "FC6"],
    "10-10-29": _MONTAGE_19 + ["FC1", "FC2", "FC5", "FC6", "CP1", "CP2",
                               "CP5", "CP6", "Fpz", "Oz"],
    "10-10-31": _MONTAGE_19 + ["FC1", "FC2", "FC5", "FC6", "CP1", "CP2",
                               "CP5", "CP6", "Fpz", "Oz", "AF3", "AF4"],
}

# Longitudinal bipolar chain over the 10-20 electrodes.
DOUBLE_BANANA = [
    ("Fp1", "F7"), ("F7", "T7"), ("T7", "P7"), ("P7", "O1"),
    ("Fp1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("Fp2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
    ("Fp2", "F8"), ("F8", "T8"), ("T8", "P8"), ("P8", "O2"),
    ("Fz", "Cz"), ("Cz", "Pz"),
]


class GeometryError(ValueError):
    pass


def _load_table():
    text = resources.files("dipcodec").joinpath("data/electrodes_1010.txt").read_text()
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        label, az, lat = line.split()
        table[label] = (float(az), float(lat))
    return table


_TABLE = _load_table()


def table_labels():
    """Labels of the built-in position table, in table order."""
    return list(_TABLE)


_LOOKUP = {k.lower(): k for k in _TABLE}
_LOOKUP.update({old.lower(): new for old, new in ALIASES.items()})


def _canonical(label):
    return _LOOKUP.get(label.strip().lower())


def polar_to_cartesian(azimuth_deg, latitude_deg, radius):
    az = math.radians(azimuth_deg)
    lat = math.radians(latitude_deg)
    if latitude_deg == 90.0:
        return np.array([0.0, 0.0, radius])
    return radius * np.array([math.cos(lat) * math.cos(az),
                              math.cos(lat) * math.sin(az),
                              math.sin(lat)])


@dataclass(frozen=True)
class ElectrodeArray:
    positions: np.ndarray
    labels: tuple

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError("positions must be an (M, 3) array")
        if pos.shape[0] < 2:
            raise GeometryError("need at least two electrodes")
        if len(self.labels) != pos.shape[0]:
            raise GeometryError("one label per electrode required")
        if len(set(self.labels)) != len(self.labels):
            raise GeometryError("electrode labels must be unique")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def radius(self):
        return float(np.linalg.norm(self.positions, axis=1).max())

    def check_on_sphere(self, radius, rtol=1e-6):
        r = np.linalg.norm(self.positions, axis=1)
        if np.any(np.abs(r - radius) > rtol * radius):
            raise GeometryError("electrodes are not on the scalp sphere")


@dataclass(frozen=True)
class HeadModel:
    """Concentric spherical volume conductor; ``shells`` run inside out."""

    shells: tuple
    kind: str = CONCENTRIC

    def __post_init__(self):
        shells = tuple((float(r), float(s)) for r, s in self.shells)
        if self.kind not in (SINGLE_SPHERE, CONCENTRIC):
            raise GeometryError(f"unknown head model kind {self.kind!r}")
        if self.kind == SINGLE_SPHERE and len(shells) != 1:
            raise GeometryError("single sphere model takes exactly one shell")
        if self.kind == CONCENTRIC and len(shells) not in (3, 4):
            raise GeometryError("concentric model takes 3 or 4 shells")
        radii = [r for r, _ in shells]
        if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise GeometryError("shell radii must be positive and strictly increasing")
        if any(s <= 0 for _, s in shells):
            raise GeometryError("conductivities must be positive")
        object.__setattr__(self, "shells", shells)

    @property
    def radii(self):
        return np.array([r for r, _ in self.shells])

    @property
    def sigmas(self):
        return np.array([s for _, s in self.shells])

    @property
    def scalp_radius(self):
        return self.shells[-1][0]

    @property
    def inner_radius(self):
        return self.shells[0][0]

    @classmethod
    def single_sphere(cls, radius=SCALP_RADIUS, sigma=0.33):
        return cls(((radius, sigma),), SINGLE_SPHERE)

    @classmethod
    def four_shell(cls, radii=FOUR_SHELL_RADII, sigmas=FOUR_SHELL_SIGMAS):
        return cls(tuple(zip(radii, sigmas)), CONCENTRIC)


@dataclass(frozen=True)
class DipoleGrid:
    locations: np.ndarray
    spacing: float
    target_count: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 3)
        if loc.shape[0] < 1:
            raise GeometryError("grid must hold at least one location")
        loc.setflags(write=False)
        object.__setattr__(self, "locations", loc)

    def __len__(self):
        return self.locations.shape[0]


def standard_electrodes(montage_name, M, radius=SCALP_RADIUS):
    """Electrodes of a built-in montage projected onto the scalp sphere."""
    try:
        labels = MONTAGES[montage_name]
    except KeyError:
        raise GeometryError(f"unknown montage {montage_name!r}") from None
    if M != len(labels):
        raise GeometryError(f"montage {montage_name} has {len(labels)} channels, not {M}")
    return electrodes_from_labels(labels, radius)


def electrodes_from_labels(labels, radius=SCALP_RADIUS):
    pos = []
    for lab in labels:
        key = _canonical(lab)
        if key is None:
            raise GeometryError(f"no built-in position for electrode {lab!r}")
        pos.append(polar_to_cartesian(*_TABLE[key], radius))
    return ElectrodeArray(np.array(pos), tuple(labels))


def montage_for(M):
    """Built-in montage with M channels, or the first M table entries."""
    for labels in MONTAGES.values():
        if len(labels) == M:
            return list(labels)
    names = table_labels()
    if not 2 <= M <= len(names):
        raise GeometryError(f"no built-in layout with {M} channels")
    return names[:M]


def _project(v, radius):
    n = np.linalg.norm(v)
    if n < 1e-12 * radius:
        raise GeometryError("midpoint at the sphere centre cannot be projected")
    return v * (radius / n)


def bipolar_midpoints(pairs, base: ElectrodeArray):
    """One channel per electrode pair, placed at the re-projected midpoint."""
    index = {lab: i for i, lab in enumerate(base.labels)}
    radius = base.radius
    pos, labels = [], []
    for a, b in pairs:
        for lab in (a, b):
            if lab not in index:
                raise GeometryError(f"unknown electrode {lab!r}")
        mid = 0.5 * (base.positions[index[a]] + base.positions[index[b]])
        pos.append(_project(mid, radius))
        labels.append(f"{a}-{b}")
    return ElectrodeArray(np.array(pos), tuple(labels))


def parse_bipolar_label(label):
    """Split 'FP1-F7' into canonical table labels, or return None."""
    if "-" not in label:
        return None
    a, b = label.split("-", 1)
    a, b = _canonical(a), _canonical(b)
    if a is None or b is None:
        return None
    return a, b


def read_electrode_csv(path, radius=None):
    """Custom positions from a ``label,x,y,z`` CSV, optionally re-projected."""
    labels, pos = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "label":
                continue
            if len(row) != 4:
                raise GeometryError(f"expected label,x,y,z, got {row!r}")
            labels.append(row[0].strip())
            pos.append([float(v) for v in row[1:]])
    pos = np.array(pos)
    if radius is not None:
        pos = np.array([_project(p, radius) for p in pos])
    return ElectrodeArray(pos, tuple(labels))


def _lattice(spacing, limit):
    n = int(math.floor(limit / spacing))
    ax = np.arange(-n, n + 1)
    k, j, i = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = spacing * np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
    return pts[np.linalg.norm(pts, axis=1) < limit]


def _count(spacing, limit):
    n = int(math.floor(limit / spacing))
    ax = np.arange(-n, n + 1) * spacing
    r2 = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    return int(np.count_nonzero(np.sqrt(r2) < limit))


def build_grid(head: HeadModel, target_count, iterations=80):
    """Uniform interior grid whose size is as close as bisection gets to ``target_count``.

    Points lie on the lattice ``spacing * (i, j, k)`` strictly inside
    ``GRID_MARGIN`` times the innermost radius, ordered by (z, y, x).
    """
    target_count = int(target_count)
    if target_count < 1 or target_count > MAX_GRID_POINTS:
        raise GeometryError(f"grid size {target_count} is unreachable")
    limit = GRID_MARGIN * head.inner_radius
    hi = limit * 1.0000001            # only the centre survives
    lo = limit / (2.0 * target_count ** (1.0 / 3.0))
    if _count(lo, limit) < target_count or _count(hi, limit) > target_count:
        raise GeometryError(f"grid size {target_count} could not be bracketed")
    best_h, best_err = hi, abs(1 - target_count)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        c = _count(mid, limit)
        err = abs(c - target_count)
        if err < best_err or (err == best_err and mid > best_h):
            best_h, best_err = mid, err
        if c == target_count:
            break
        if c > target_count:
            lo = mid
        else:
            hi = mid
    pts = _lattice(best_h, limit)
    order = np.lexsort((pts[:, 0], pts[:, 1], pts[:, 2]))
    pts = pts[order]
    return DipoleGrid(pts, best_h, target_count, {"count": len(pts)})
