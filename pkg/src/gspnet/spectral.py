"""Graph Fourier basis, transforms, spectral convolution and band masks."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SpectralError
from .linalg import as_symmatrix, jacobi_eigh, orthonormality_error

GSPB_MAGIC = b"GSPB"


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenvectors (columns of ``u``) and ascending graph frequencies."""

    u: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, copy=True)
        lam = np.array(self.lambdas, dtype=np.float64, copy=True)
        n = lam.shape[0]
        if lam.ndim != 1 or u.shape != (n, n):
            raise SpectralError(f"basis shapes disagree: u {u.shape}, lambdas {lam.shape}", "shape_mismatch")
        if np.any(np.diff(lam) < 0):
            raise SpectralError("graph frequencies must be non-decreasing", "unsorted")
        if lam[0] < -1e-10 or lam[-1] > 2 + 1e-10:
            raise SpectralError(
                f"graph frequencies must lie in [0, 2], got [{lam[0]:.3g}, {lam[-1]:.3g}]", "out_of_range"
            )
        if orthonormality_error(u) >= 1e-10:
            raise SpectralError("basis vectors are not orthonormal", "not_orthonormal")
        u.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "lambdas", lam)

    @property
    def n(self):
        return self.lambdas.shape[0]


@dataclass(frozen=True)
class BandSpec:
    offset: int
    bandwidth: int

    def indices(self):
        return np.arange(self.offset, self.offset + self.bandwidth)


def build_basis(lap):
    """Diagonalize a normalized Laplacian into a SpectralBasis.

    The spectrum must lie in [0, 2] and contain 0 (to 1e-6); anything
    else means the input was not a normalized Laplacian.
    """
    sym = as_symmatrix(lap)
    pairs = jacobi_eigh(sym)
    lam = pairs.values
    if lam[0] < -1e-6 or lam[-1] > 2 + 1e-6:
        raise SpectralError(
            f"spectrum [{lam[0]:.6g}, {lam[-1]:.6g}] is outside [0, 2]: not a normalized Laplacian", "not_laplacian"
        )
    if abs(lam[0]) > 1e-6:
        raise SpectralError(
            f"smallest eigenvalue {lam[0]:.6g} is not 0: not a normalized Laplacian", "not_laplacian"
        )
    return SpectralBasis(pairs.vectors, lam)


def _rows(b, x, name):
    x = np.asarray(x)
    if x.ndim not in (1, 2) or x.shape[0] != b.n:
        raise SpectralError(f"{name} must have {b.n} rows, got shape {x.shape}", "dimension_mismatch")
    return x


def gft(b, x):
    """Spectrum ``Uᵀ x``; ``x`` is (n,) or (n, channels)."""
    return b.u.T @ _rows(b, x, "signal")


def igft(b, xhat):
    """Signal ``U x̂``; ``xhat`` is (n,) or (n, channels)."""
    return b.u @ _rows(b, xhat, "spectrum")


def spectral_convolve(b, x, h):
    x = _rows(b, x, "signal")
    h = _rows(b, h, "filter")
    if x.ndim != 1 or h.ndim != 1:
        raise SpectralError("spectral_convolve takes single-channel signals", "dimension_mismatch")
    return igft(b, gft(b, x) * gft(b, h))


def band_mask(n, band):
    if band.offset < 0 or band.bandwidth < 1 or band.offset + band.bandwidth > n:
        raise SpectralError(
            f"band offset={band.offset} bandwidth={band.bandwidth} does not fit in {n} frequencies", "bad_band"
        )
    mask = np.zeros(n, dtype=bool)
    mask[band.offset : band.offset + band.bandwidth] = True
    return mask


# ---------------------------------------------------------------------------
# GSPB cache: magic, <u4 n, n <f8 lambdas, n*n <f8 u in column-major order
# ---------------------------------------------------------------------------

def save_basis(b, path):
    payload = GSPB_MAGIC + struct.pack("<I", b.n)
    payload += b.lambdas.astype("<f8").tobytes()
    payload += np.asarray(b.u, dtype="<f8").tobytes(order="F")
    Path(path).write_bytes(payload)


def load_basis(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SpectralError(f"cannot read basis file {path}: {exc}", "io_error") from exc
    if raw[:4] != GSPB_MAGIC or len(raw) < 8:
        raise SpectralError(f"{path} is not a GSPB basis file", "bad_magic")
    (n,) = struct.unpack("<I", raw[4:8])
    expected = 8 + 8 * n + 8 * n * n
    if len(raw) != expected:
        raise SpectralError(f"{path}: expected {expected} bytes for n={n}, got {len(raw)}", "payload_size")
    lam = np.frombuffer(raw, dtype="<f8", count=n, offset=8)
    u = np.frombuffer(raw, dtype="<f8", count=n * n, offset=8 + 8 * n).reshape((n, n), order="F")
    return SpectralBasis(u.astype(np.float64), lam.astype(np.float64))


def basis_for_graph(g, cache_path=None):
    """Build the basis of ``g``'s normalized Laplacian, reusing a cache file."""
    from .graph import normalized_laplacian

    if cache_path is not None and Path(cache_path).exists():
        b = load_basis(cache_path)
        if b.n == g.n:
            return b
    b = build_basis(normalized_laplacian(g))
    if cache_path is not None:
        save_basis(b, cache_path)
    return b
