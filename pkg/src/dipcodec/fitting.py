"""Grid-search dipole fitting and forward projection."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .leadfield import ForwardModel


class FitError(ValueError):
    pass


def pseudo_inverse(A):
    """Moore-Penrose inverse via SVD, zeroing singular values below max(M, K) * s_max * 1e-12."""
    A = np.asarray(A, dtype=float)
    M, K = A.shape
    if A.size == 0:
        return np.zeros((K, M))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = max(M, K) * (s[0] if s.size else 0.0) * 1e-12
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def average_reference_matrix(K):
    """Subtract the across-electrode mean from every column."""
    return K - K.mean(axis=0, keepdims=True)


@dataclass
class DipoleFit:
    positions: tuple          # grid indices
    moments: np.ndarray       # (3 * N_d, N)
    fit_error: float
    model_digest: int = 0

    @property
    def n_dipoles(self):
        return len(self.positions)


class _Projector:
    __slots__ = ("K", "pinv", "proj")

    def __init__(self, K):
        self.K = K
        self.pinv = pseudo_inverse(K)
        self.proj = np.eye(K.shape[0]) - K @ self.pinv


def _projector(model: ForwardModel, combo):
    cache = model.fit_cache
    key = tuple(combo)
    p = cache.get(key)
    if p is None:
        K = average_reference_matrix(model.assemble(combo).matrix)
        p = cache.setdefault(key, _Projector(K))
    return p


def combination_error(block, model: ForwardModel, combo):
    """Summed squared misfit over the block, using the projector (I - K K+)."""
    r = _projector(model, combo).proj @ block
    return float(np.sum(r * r))


def fit_block(block, model: ForwardModel, n_dipoles=1):
    """Best combination of ``n_dipoles`` grid locations for an average-referenced block.

    Every unordered combination is scored by its block misfit; ties go to
    the lexicographically first combination.
    """
    block = np.asarray(block, dtype=float)
    P = len(model.grid)
    if P == 0:
        raise FitError("empty grid")
    if n_dipoles < 1 or n_dipoles > P:
        raise FitError(f"cannot fit {n_dipoles} dipoles on a {P}-point grid")
    best, best_err = None, np.inf
    for combo in combinations(range(P), n_dipoles):
        err = combination_error(block, model, combo)
        if err < best_err:
            best, best_err = combo, err
    moments = _projector(model, best).pinv @ block
    return DipoleFit(tuple(best), moments, best_err, model.digest)


def referenced_leadfield(model: ForwardModel, combo):
    """Average-referenced lead field of a combination (cached with its projector)."""
    return _projector(model, combo).K


def forward(fit: DipoleFit, model: ForwardModel):
    """Modelled scalp potentials K_c G for a fit (average-referenced lead field)."""
    if fit.model_digest != model.digest:
        raise FitError("fit was computed with a different head/electrode/grid model")
    K = _projector(model, fit.positions).K
    return K @ fit.moments
