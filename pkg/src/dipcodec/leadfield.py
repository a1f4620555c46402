"""Lead fields of current dipoles in spherical volume conductors.

``leadfield_single_sphere`` is the closed-form surface potential of a dipole
in a homogeneous sphere.  ``leadfield_concentric`` sums the Legendre series
for nested shells; the per-order shell factor is obtained by propagating the
radial admittance inwards and the potential outwards, which keeps every
intermediate quantity bounded.

Matrices are in SI units (volt per ampere-metre); row ``i`` is electrode
``i`` and columns are the x, y, z moment components.
"""
from __future__ import annotations

import hashlib
import threading
import warnings

import numpy as np

from .geometry import CONCENTRIC, SINGLE_SPHERE, DipoleGrid, ElectrodeArray, HeadModel

SERIES_RTOL = 1e-10
SERIES_MAX_TERMS = 400
SERIES_FAIL_RTOL = 1e-6


class LeadFieldError(ValueError):
    pass


class SeriesConvergenceError(LeadFieldError):
    pass


def _check_inside(location, radius):
    r = float(np.linalg.norm(location))
    if not r < radius:
        raise LeadFieldError(f"dipole at radius {r:.6g} m is not inside {radius:.6g} m")
    return r


def leadfield_single_sphere(head: HeadModel, electrodes: ElectrodeArray, location):
    if head.kind != SINGLE_SPHERE:
        raise LeadFieldError("closed form needs a single-sphere head model")
    R, sigma = head.shells[0]
    r0 = np.asarray(location, dtype=float)
    _check_inside(r0, R)
    e = electrodes.positions * (R / np.linalg.norm(electrodes.positions, axis=1))[:, None]
    d = e - r0
    D = np.linalg.norm(d, axis=1)[:, None]
    ed = np.sum(e * d, axis=1)[:, None]
    f = 2.0 * d / D**3 + (R * d + D * e) / (R * D * (R * D + ed))
    return f / (4.0 * np.pi * sigma)


def shell_factors(head: HeadModel, n_max=SERIES_MAX_TERMS):
    """f_n for n = 1..n_max, scaled so a homogeneous sphere gives (2n+1)/n."""
    rho = head.radii / head.scalp_radius
    sig = head.sigmas
    n = np.arange(1, n_max + 1, dtype=float)
    y = np.zeros_like(n)                     # rho * admittance / sigma at scalp
    gain = np.ones_like(n)
    for k in range(len(rho) - 1, 0, -1):
        top, bottom = rho[k], rho[k - 1]
        u_top = (y / sig[k] + n + 1) / (n - y / sig[k])
        u_bot = u_top * (bottom / top) ** (2 * n + 1)
        gain *= (1 + u_top) / (1 + u_bot)
        y = sig[k] * (n * u_bot - (n + 1)) / (u_bot + 1)
    u1 = (y / sig[0] + n + 1) / (n - y / sig[0])
    return (1 + u1) * gain


def _series_rows(factors, rho0, z_hat, e_hat, rtol=SERIES_RTOL, max_terms=SERIES_MAX_TERMS):
    """Radial and tangential series for a batch of dipoles.

    rho0: (P,) eccentricities, z_hat: (P, 3), e_hat: (M, 3).
    Returns s_r, s_t of shape (P, M) and the number of terms used per dipole.
    """
    x = _cosines(z_hat, e_hat)               # (P, M)
    P = x.shape[0]
    p_prev, p_cur = np.ones_like(x), x.copy()          # P_0, P_1
    dp_prev, dp_cur = np.zeros_like(x), np.ones_like(x)  # P_0', P_1'
    s_r = np.zeros_like(x)
    s_t = np.zeros_like(x)
    active = np.ones(P, dtype=bool)
    used = np.zeros(P, dtype=int)
    last_rel = np.zeros(P)
    tpow = np.ones(P)                        # rho0 ** (n - 1)
    for n in range(1, max_terms + 1):
        c = factors[n - 1] * tpow
        tr = (n * c)[:, None] * p_cur
        tt = c[:, None] * dp_cur
        tr[~active] = 0.0
        tt[~active] = 0.0
        s_r += tr
        s_t += tt
        used[active] = n
        size = np.sqrt(np.sum(tr**2 + tt**2, axis=1))
        total = np.sqrt(np.sum(s_r**2 + s_t**2, axis=1))
        rel = np.where(total > 0, size / np.where(total > 0, total, 1.0), 0.0)
        last_rel[active] = rel[active]
        active &= ~(rel < rtol)
        if not active.any():
            break
        p_next = ((2 * n + 1) * x * p_cur - n * p_prev) / (n + 1)
        dp_next = dp_prev + (2 * n + 1) * p_cur
        p_prev, p_cur = p_cur, p_next
        dp_prev, dp_cur = dp_cur, dp_next
        tpow = tpow * rho0
    if active.any():
        worst = float(last_rel[active].max())
        if worst > SERIES_FAIL_RTOL:
            raise SeriesConvergenceError(
                f"Legendre series not converged after {max_terms} terms (rel {worst:.2e})")
        warnings.warn(f"Legendre series truncated at {max_terms} terms (rel {worst:.2e})")
    return s_r, s_t, used


def _cosines(z_hat, e_hat):
    # elementwise, so a batch row is bit-identical to a single evaluation
    return (z_hat[:, None, 0] * e_hat[None, :, 0] + z_hat[:, None, 1] * e_hat[None, :, 1]
            + z_hat[:, None, 2] * e_hat[None, :, 2])


def _dipole_frames(locations):
    b = np.linalg.norm(locations, axis=1)
    z_hat = np.zeros_like(locations)
    z_hat[:, 2] = 1.0
    nz = b > 0
    z_hat[nz] = locations[nz] / b[nz, None]
    return b, z_hat


def leadfield_concentric_batch(head: HeadModel, electrodes: ElectrodeArray, locations,
                               factors=None):
    """(P, M, 3) lead fields for several dipoles; each slice equals the single call."""
    locations = np.asarray(locations, dtype=float).reshape(-1, 3)
    R = head.scalp_radius
    for loc in locations:
        _check_inside(loc, head.inner_radius)
    if factors is None:
        factors = shell_factors(head)
    e_hat = electrodes.positions / np.linalg.norm(electrodes.positions, axis=1)[:, None]
    b, z_hat = _dipole_frames(locations)
    s_r, s_t, _ = _series_rows(factors, b / R, z_hat, e_hat)
    x = _cosines(z_hat, e_hat)
    # row = s_r * z + s_t * (e - x z)
    z = z_hat[:, None, :]
    rows = (s_r - s_t * x)[:, :, None] * z + s_t[:, :, None] * e_hat[None, :, :]
    return rows / (4.0 * np.pi * head.sigmas[0] * R**2)


def leadfield_concentric(head: HeadModel, electrodes: ElectrodeArray, location):
    if head.kind != CONCENTRIC:
        raise LeadFieldError("series solution needs a concentric-spheres head model")
    return leadfield_concentric_batch(head, electrodes, location)[0]


def model_digest(head: HeadModel, electrodes: ElectrodeArray, grid: DipoleGrid, scale=1.0):
    """64-bit digest of everything the decoder must reproduce exactly."""
    h = hashlib.blake2b(digest_size=8)
    h.update(head.kind.encode())
    h.update(np.asarray(head.shells, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(electrodes.positions, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(grid.locations, dtype="<f8").tobytes())
    h.update(np.array([scale, SERIES_RTOL, SERIES_MAX_TERMS], dtype="<f8").tobytes())
    return int.from_bytes(h.digest(), "little")


class LeadField:
    """Concatenated per-dipole blocks for one combination of grid indices."""

    def __init__(self, matrix, dipole_indices, model_digest):
        self.matrix = matrix
        self.dipole_indices = tuple(dipole_indices)
        self.model_digest = model_digest

    def __repr__(self):
        return f"LeadField(indices={self.dipole_indices}, shape={self.matrix.shape})"


class ForwardModel:
    """Head model, electrodes and grid, with memoised per-location lead fields.

    ``scale`` multiplies the SI lead field; the codec uses it to express
    potentials in microvolts per nA*m.  The memo is filled under a lock so
    concurrent readers see complete entries only.
    """

    def __init__(self, head: HeadModel, electrodes: ElectrodeArray, grid: DipoleGrid,
                 scale=1.0):
        electrodes.check_on_sphere(head.scalp_radius)
        self.head = head
        self.electrodes = electrodes
        self.grid = grid
        self.scale = float(scale)
        self.digest = model_digest(head, electrodes, grid, self.scale)
        self._blocks = None
        self.fit_cache = {}
        self._lock = threading.Lock()

    def _compute_all(self):
        locs = self.grid.locations
        if self.head.kind == SINGLE_SPHERE:
            blocks = np.stack([leadfield_single_sphere(self.head, self.electrodes, p)
                               for p in locs])
        else:
            blocks = leadfield_concentric_batch(self.head, self.electrodes, locs)
        blocks = blocks * self.scale
        blocks.setflags(write=False)
        return blocks

    @property
    def blocks(self):
        """(P, M, 3) lead-field blocks for every grid location."""
        if self._blocks is None:
            with self._lock:
                if self._blocks is None:
                    self._blocks = self._compute_all()
        return self._blocks

    def block(self, index):
        return self.blocks[index]

    def assemble(self, combo):
        combo = [int(k) for k in combo]
        if len(set(combo)) != len(combo):
            raise LeadFieldError(f"duplicate grid index in {combo}")
        P = len(self.grid)
        for k in combo:
            if not 0 <= k < P:
                raise LeadFieldError(f"grid index {k} out of range")
        mat = np.concatenate([self.blocks[k] for k in combo], axis=1)
        return LeadField(mat, combo, self.digest)
