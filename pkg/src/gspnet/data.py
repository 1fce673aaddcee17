"""Datasets of graph signals: container, on-disk format, planted-band generator.

On disk a dataset is a directory holding::

    manifest.json   {"version": 1, "n_vertices", "n_samples", "n_classes",
                     "signals": "signals.f32", "labels": "labels.u32",
                     "sha256": {"signals": ..., "labels": ...}}
    signals.f32     little-endian float32, row-major (n_samples, n_vertices)
    labels.u32      little-endian uint32, n_samples values
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_VERSION = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    signals: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.array(self.signals, dtype=np.float32, copy=True)
        y = np.array(self.labels, copy=True)
        if x.ndim != 2:
            raise DataError(f"signals must be (n_samples, n_vertices), got {x.shape}", "bad_shape")
        if y.shape != (x.shape[0],):
            raise DataError(f"expected {x.shape[0]} labels, got shape {y.shape}", "bad_shape")
        if y.size and (not np.issubdtype(y.dtype, np.integer) and np.any(y != np.round(y))):
            raise DataError("labels must be integers", "bad_labels")
        y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= self.n_classes):
            raise DataError(f"label out of range [0, {self.n_classes})", "label_out_of_range")
        if not np.all(np.isfinite(x)):
            raise DataError("signals contain non-finite values", "non_finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "signals", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self):
        return self.signals.shape[0]

    @property
    def n_vertices(self):
        return self.signals.shape[1]

    def subset(self, idx):
        return Dataset(self.signals[idx], self.labels[idx], self.n_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def validate_classes(self):
        missing = np.flatnonzero(self.class_counts() == 0)
        if missing.size:
            raise DataError(f"classes {missing.tolist()} have no samples", "empty_class")

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.n_classes == other.n_classes
            and np.array_equal(self.labels, other.labels)
            and self.signals.shape == other.signals.shape
            and self.signals.tobytes() == other.signals.tobytes()
        )


def _sha256(raw):
    return hashlib.sha256(raw).hexdigest()


def save_dataset(ds, directory, overwrite=False):
    """Write ``ds`` under ``directory`` and return the manifest path."""
    ds.validate_classes()
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists() and not overwrite:
        raise DataError(f"{manifest} already exists; pass overwrite=True to replace it", "exists")
    signals = ds.signals.astype("<f4").tobytes()
    labels = ds.labels.astype("<u4").tobytes()
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "signals.f32").write_bytes(signals)
        (directory / "labels.u32").write_bytes(labels)
        meta = {
            "version": MANIFEST_VERSION,
            "n_vertices": ds.n_vertices,
            "n_samples": ds.n_samples,
            "n_classes": ds.n_classes,
            "signals": "signals.f32",
            "labels": "labels.u32",
            "sha256": {"signals": _sha256(signals), "labels": _sha256(labels)},
        }
        manifest.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write dataset to {directory}: {exc}", "io_error") from exc
    return manifest


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}", "missing_file")
    try:
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
        n, m, c = int(meta["n_vertices"]), int(meta["n_samples"]), int(meta["n_classes"])
        files = {key: manifest_path.parent / meta[key] for key in ("signals", "labels")}
        digests = meta["sha256"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}", "bad_manifest") from exc
    raw = {}
    for key, path in files.items():
        if not path.exists():
            raise DataError(f"missing payload file: {path}", "missing_file")
        raw[key] = path.read_bytes()
    if len(raw["signals"]) != 4 * n * m or len(raw["labels"]) != 4 * m:
        raise DataError(f"payload size mismatch for {manifest_path}", "payload_size")
    for key in ("signals", "labels"):
        if _sha256(raw[key]) != digests.get(key):
            raise DataError(f"checksum mismatch for {files[key]}", "checksum")
    x = np.frombuffer(raw["signals"], dtype="<f4").reshape(m, n)
    y = np.frombuffer(raw["labels"], dtype="<u4")
    if np.any(y >= c):
        raise DataError(f"label out of range [0, {c})", "label_out_of_range")
    ds = Dataset(x, y, c)
    ds.validate_classes()
    return ds


def synth_planted_band(basis, n_classes, band, snr, samples_per_class, seed):
    """Classification data whose class means live on a chosen set of frequencies.

    Each class gets a unit-norm spectral mean supported on ``band``; a
    sample is ``U (snr * mean + noise)`` with i.i.d. standard normal noise
    on every graph frequency.  Labels are balanced and shuffled.
    """
    band = np.asarray(getattr(band, "indices", band), dtype=np.int64)
    if band.size == 0:
        raise DataError("band must contain at least one frequency", "empty_band")
    if np.any(band < 0) or np.any(band >= basis.n) or np.unique(band).size != band.size:
        raise DataError(f"band indices must be distinct and within [0, {basis.n})", "bad_band")
    if not snr > 0:
        raise DataError(f"snr must be positive, got {snr}", "bad_snr")
    if samples_per_class < 1:
        raise DataError("samples_per_class must be >= 1", "bad_count")
    if n_classes < 2:
        raise DataError("need at least 2 classes", "bad_count")
    rng = np.random.default_rng(seed)
    means = _draw_means(rng, n_classes, band, basis.n)
    labels = rng.permutation(np.repeat(np.arange(n_classes), samples_per_class))
    spectra = snr * means[labels] + rng.normal(size=(labels.size, basis.n))
    signals = spectra @ basis.u.T
    return Dataset(signals.astype(np.float32), labels, n_classes)


def class_means_spectrum(basis, n_classes, band, seed):
    """The noiseless spectral class means ``synth_planted_band`` would draw."""
    band = np.asarray(getattr(band, "indices", band), dtype=np.int64)
    return _draw_means(np.random.default_rng(seed), n_classes, band, basis.n)


def _draw_means(rng, n_classes, band, n):
    means = np.zeros((n_classes, n))
    draw = rng.normal(size=(n_classes, band.size))
    means[:, band] = draw / np.linalg.norm(draw, axis=1, keepdims=True)
    return means
