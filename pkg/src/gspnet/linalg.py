"""Dense symmetric eigendecomposition.

The spectral pipeline needs the full set of orthonormal eigenvectors of a
small (N of a few hundred) normalized Laplacian, computed reproducibly.
This module provides a cyclic Jacobi solver with a deterministic
orientation and ordering of the eigenvectors.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, LinalgError

DEFAULT_TOL = 1e-12
MAX_SWEEPS = 100
# eigenvalues closer than this are treated as one degenerate cluster
CLUSTER_GAP = 1e-10


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Real symmetric matrix, exactly symmetric after construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise LinalgError(f"expected a square matrix, got shape {a.shape}", "not_square")
        if a.shape[0] < 1:
            raise LinalgError("matrix must be at least 1x1", "empty")
        if not np.all(np.isfinite(a)):
            raise LinalgError("matrix has non-finite entries", "non_finite")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > 1e-10 * scale:
            raise LinalgError("matrix is not symmetric", "not_symmetric")
        # (x + y) / 2 == (y + x) / 2 bit for bit, so this is exactly symmetric
        object.__setattr__(self, "entries", _frozen((a + a.T) / 2.0))

    @property
    def n(self):
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class EigenPairs:
    """Ascending eigenvalues and matching orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "vectors", _frozen(self.vectors))

    @property
    def n(self):
        return self.values.shape[0]


def as_symmatrix(a):
    return a if isinstance(a, SymMatrix) else SymMatrix(a)


def orthonormality_error(vectors):
    """Largest entrywise deviation of ``VᵀV`` from the identity."""
    v = np.asarray(vectors, dtype=np.float64)
    return float(np.max(np.abs(v.T @ v - np.eye(v.shape[1]))))


def _orient(vectors):
    # first entry within 1e-12 of the largest magnitude decides the sign;
    # the slack keeps +-1/sqrt(2) pairs from flipping on a one-ulp difference
    v = vectors.copy()
    mags = np.abs(v)
    for j in range(v.shape[1]):
        lead = int(np.argmax(mags[:, j] >= mags[:, j].max() - 1e-12))
        if v[lead, j] < 0:
            v[:, j] = -v[:, j]
    return v


def _canonical_order(values, vectors):
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    start = 0
    n = values.shape[0]
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[stop - 1] < CLUSTER_GAP:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            keys = [tuple(np.round(block[:, j], 10)) for j in range(block.shape[1])]
            perm = sorted(range(len(keys)), key=lambda j: keys[j], reverse=True)
            vectors[:, start:stop] = block[:, perm]
            # values inside a cluster differ by < CLUSTER_GAP; keep them ascending
            values[start:stop] = np.sort(values[start:stop])
        start = stop
    return values, vectors


def jacobi_eigh(a, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS, use_numba=None):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Sweeps run in tournament order until the off-diagonal Frobenius norm
    drops below ``tol * ||a||_F``.  Eigenvalues come back ascending;
    each eigenvector is oriented so that its largest-magnitude entry is
    non-negative, and eigenvectors of a degenerate cluster are sorted in
    descending lexicographic order.

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_sweeps`` sweeps.
    """
    if not tol > 0:
        raise LinalgError(f"tol must be positive, got {tol}", "bad_tolerance")
    sym = as_symmatrix(a)
    work = np.array(sym.entries, dtype=np.float64, order="C")
    v = np.eye(sym.n)
    scale = float(np.linalg.norm(work))
    off, sweeps = _kernels.jacobi_sweeps(work, v, tol * scale, max_sweeps, use_numba=use_numba)
    if off > tol * scale:
        residual = off / scale
        raise ConvergenceError(
            f"Jacobi did not converge after {sweeps} sweeps: relative off-diagonal norm {residual:.3e}",
            residual,
        )
    values, vectors = _canonical_order(np.diag(work).copy(), _orient(v))
    return EigenPairs(values, vectors)


def reconstruction_residual(a, e):
    """Relative Frobenius error ``||a - V diag(w) Vᵀ|| / ||a||``."""
    sym = as_symmatrix(a)
    if e.vectors.shape != (sym.n, sym.n) or e.values.shape != (sym.n,):
        raise LinalgError(
            f"dimension mismatch: matrix is {sym.n}x{sym.n}, eigenpairs have {e.vectors.shape}",
            "dimension_mismatch",
        )
    recon = (e.vectors * e.values) @ e.vectors.T
    denom = max(float(np.linalg.norm(sym.entries)), np.finfo(np.float64).tiny)
    return float(np.linalg.norm(sym.entries - recon) / denom)
