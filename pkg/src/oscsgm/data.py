"""Target datasets: the 2D Gaussian mixture and MNIST-style digit ingestion.

The mixture has an exact density used by the evaluation overlays, so sampling
and density evaluation live together here. Digit images arrive in the binary
IDX container (big-endian magic, dimension header, ubyte payload), are
center-cropped from 28 to 24, block-averaged down to a small square, and
mapped affinely from pixel value to oscillator displacement. The default
displacement amplitude 0.7861.. puts binarized pixels exactly at the minima
of the untrained single-site potential -x^2/2 + x^4/4 + x^6/6.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (
    DimensionMismatchError,
    IdxCountMismatchError,
    IdxDimOverflowError,
    IdxFormatError,
    IdxMagicError,
    IdxTruncatedError,
    ValidationError,
)
from .rng import NoiseSource

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
# Largest element count accepted for a single IDX dimension / whole payload.
_IDX_DIM_CAP = 100_000_000
_IDX_SIZE_CAP = 1_000_000_000

DISPLACEMENT_AMPLITUDE = math.sqrt((math.sqrt(5.0) - 1.0) / 2.0)  # ~0.7861514


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture in the plane with exact density."""

    weights: np.ndarray
    means: np.ndarray       # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covariances, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 1:
            raise ValidationError("weights must be a nonempty vector")
        k = w.shape[0]
        if mu.shape != (k, 2):
            raise DimensionMismatchError("means", (k, 2), mu.shape)
        if cov.shape != (k, 2, 2):
            raise DimensionMismatchError("covariances", (k, 2, 2), cov.shape)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be nonnegative and sum to 1")
        chols = []
        for i in range(k):
            c = cov[i]
            if not np.allclose(c, c.T):
                raise ValidationError(f"covariance {i} is not symmetric")
            try:
                chols.append(np.linalg.cholesky(c))
            except np.linalg.LinAlgError:
                raise ValidationError(f"covariance {i} is not positive definite") from None
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ch = np.stack(chols)
        ch.setflags(write=False)
        object.__setattr__(self, "_chol", ch)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def default(cls) -> "MixtureSpec":
        """Two well-separated modes; separation >> thermal length at kbt=0.005.

        The component width is chosen so the best energy fit within the
        polynomial family keeps an inter-mode barrier of roughly 9 kbt,
        deep enough that static Langevin sampling stays trapped over a
        tau*S budget while the reverse-SDE sampler still crosses freely.
        """
        return cls(
            weights=np.array([0.65, 0.35]),
            means=np.array([[-0.55, -0.20], [0.55, 0.30]]),
            covariances=np.stack([0.004 * np.eye(2)] * 2),
        )


@dataclass(frozen=True)
class Dataset:
    """Sample matrix plus provenance for reproducibility manifests."""

    samples: np.ndarray
    source: str = ""
    preprocessing: dict = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValidationError(f"samples must be a nonempty 2D matrix, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("non-finite sample entries")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (s.shape[0],):
                raise DimensionMismatchError("labels", (s.shape[0],), lab.shape)
            lab = lab.copy()
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def mixture_sample(spec: MixtureSpec, m: int, noise: NoiseSource) -> Dataset:
    """m independent draws: categorical component, then Cholesky transform."""
    if m < 1:
        raise ValidationError(f"sample count must be >= 1, got {m}")
    gen = noise.generator() if isinstance(noise, NoiseSource) else noise
    comp = gen.choice(spec.n_components, size=m, p=spec.weights)
    z = gen.standard_normal((m, 2))
    x = spec.means[comp] + np.einsum("kij,kj->ki", spec._chol[comp], z)
    return Dataset(x, source="mixture",
                   preprocessing={"weights": spec.weights.tolist(),
                                  "means": spec.means.tolist(),
                                  "covariances": spec.covariances.tolist()})


def mixture_density(spec: MixtureSpec, x) -> float | np.ndarray:
    """Exact mixture pdf at x (a point (2,) or an array (..., 2))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2:
        raise DimensionMismatchError("x", 2, x.shape)
    out = np.zeros(x.shape[:-1])
    for w, mu, cov in zip(spec.weights, spec.means, spec.covariances):
        out = out + w * stats.multivariate_normal.pdf(x, mean=mu, cov=cov)
    return float(out) if out.ndim == 0 else out


def mixture_marginal(spec: MixtureSpec, axis: int, x) -> float | np.ndarray:
    """Exact 1D marginal along the given axis (a Gaussian mixture itself)."""
    if axis not in (0, 1):
        raise ValidationError(f"axis must be 0 or 1, got {axis}")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    for w, mu, cov in zip(spec.weights, spec.means, spec.covariances):
        out = out + w * stats.norm.pdf(x, loc=mu[axis], scale=math.sqrt(cov[axis, axis]))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DisplacementMap:
    """Affine pixel <-> displacement mapping."""

    x_lo: float = -DISPLACEMENT_AMPLITUDE
    x_hi: float = DISPLACEMENT_AMPLITUDE

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValidationError("x_lo must be below x_hi")

    def to_displacement(self, pixels) -> np.ndarray:
        p = np.asarray(pixels, dtype=np.float64)
        return self.x_lo + (self.x_hi - self.x_lo) * (p / 255.0)

    def to_pixels(self, displacements) -> np.ndarray:
        d = np.asarray(displacements, dtype=np.float64)
        p = np.rint((d - self.x_lo) / (self.x_hi - self.x_lo) * 255.0)
        return np.clip(p, 0, 255).astype(np.uint8)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.x_lo + self.x_hi)


@dataclass(frozen=True)
class IdxFile:
    """Parsed IDX container: magic, dimensions, raw ubyte payload."""

    magic: int
    dims: tuple
    data: np.ndarray  # uint8, shape = dims

    @property
    def count(self) -> int:
        return self.dims[0] if self.dims else 0


def parse_idx(buf: bytes, name: str = "<bytes>") -> IdxFile:
    if len(buf) < 4:
        raise IdxTruncatedError(f"{name}: only {len(buf)} bytes, magic needs 4")
    (magic,) = struct.unpack(">I", buf[:4])
    zeros, dtype_code, ndim = magic >> 16, (magic >> 8) & 0xFF, magic & 0xFF
    if zeros != 0 or dtype_code != 0x08:
        raise IdxMagicError(f"{name}: bad magic 0x{magic:08x} (expected 0x000008<ndim>)")
    if ndim < 1 or ndim > 4:
        raise IdxMagicError(f"{name}: magic declares {ndim} dimensions, supported range is 1..4")
    header_len = 4 + 4 * ndim
    if len(buf) < header_len:
        raise IdxTruncatedError(f"{name}: header truncated ({len(buf)} bytes, need {header_len})")
    dims = struct.unpack(f">{ndim}I", buf[4:header_len])
    total = 1
    for d in dims:
        if d > _IDX_DIM_CAP:
            raise IdxDimOverflowError(f"{name}: dimension {d} exceeds the cap {_IDX_DIM_CAP}")
        total *= d
    if total > _IDX_SIZE_CAP:
        raise IdxDimOverflowError(f"{name}: payload of {total} bytes exceeds the cap {_IDX_SIZE_CAP}")
    payload = buf[header_len:]
    if len(payload) < total:
        raise IdxTruncatedError(f"{name}: payload has {len(payload)} bytes, dims require {total}")
    if len(payload) > total:
        raise IdxFormatError(f"{name}: {len(payload) - total} trailing bytes after payload")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return IdxFile(magic=magic, dims=dims, data=data)


def load_idx(path) -> IdxFile:
    path = Path(path)
    return parse_idx(path.read_bytes(), name=path.name)


def serialize_idx(idx: IdxFile) -> bytes:
    data = np.ascontiguousarray(idx.data, dtype=np.uint8)
    if tuple(data.shape) != tuple(idx.dims):
        raise DimensionMismatchError("idx.data", tuple(idx.dims), data.shape)
    head = struct.pack(">I", idx.magic) + struct.pack(f">{len(idx.dims)}I", *idx.dims)
    return head + data.tobytes()


def save_idx(idx: IdxFile, path) -> None:
    Path(path).write_bytes(serialize_idx(idx))


def make_idx(data: np.ndarray, kind: str) -> IdxFile:
    """Wrap an array as an images ('images', 3D) or labels ('labels', 1D) IDX."""
    data = np.ascontiguousarray(data, dtype=np.uint8)
    if kind == "images":
        if data.ndim != 3:
            raise ValidationError("images IDX needs a (count, rows, cols) array")
        return IdxFile(IDX_IMAGES_MAGIC, tuple(data.shape), data)
    if kind == "labels":
        if data.ndim != 1:
            raise ValidationError("labels IDX needs a 1D array")
        return IdxFile(IDX_LABELS_MAGIC, tuple(data.shape), data)
    raise ValidationError(f"unknown IDX kind '{kind}'")


def _block_pool(images: np.ndarray, out_side: int) -> np.ndarray:
    """Center-crop 28 -> 24, then average disjoint square blocks."""
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValidationError(f"expected (M, 28, 28) images, got {images.shape}")
    if 24 % out_side != 0:
        raise ValidationError(f"out_side={out_side} must divide 24")
    b = 24 // out_side
    crop = images[:, 2:26, 2:26].astype(np.float64)
    m = crop.shape[0]
    return crop.reshape(m, out_side, b, out_side, b).mean(axis=(2, 4))


def binarize(samples, mapping: Optional[DisplacementMap] = None,
             threshold: Optional[float] = None) -> np.ndarray:
    """Snap each entry to x_lo or x_hi; entries equal to the threshold go high."""
    mapping = mapping or DisplacementMap()
    if threshold is None:
        threshold = mapping.midpoint
    if not mapping.x_lo < threshold < mapping.x_hi:
        raise ValidationError(
            f"threshold {threshold} must lie strictly inside ({mapping.x_lo}, {mapping.x_hi})")
    s = np.asarray(samples, dtype=np.float64)
    return np.where(s >= threshold, mapping.x_hi, mapping.x_lo)


def mnist_prepare(images: IdxFile, labels: IdxFile, classes: Sequence[int] = (0, 1),
                  out_side: int = 12, mapping: Optional[DisplacementMap] = None,
                  binarize_pixels: bool = True,
                  threshold: Optional[float] = None) -> Dataset:
    """Filter digit classes, downsample, and map pixels to displacements.

    Rows are flattened row-major so index n corresponds to grid site
    (n // out_side, n % out_side), matching the grid topology convention.
    """
    if images.magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"images file has magic {images.magic}, expected {IDX_IMAGES_MAGIC}")
    if labels.magic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"labels file has magic {labels.magic}, expected {IDX_LABELS_MAGIC}")
    if images.count != labels.count:
        raise IdxCountMismatchError(
            f"{images.count} images vs {labels.count} labels")
    classes = tuple(int(c) for c in classes)
    mapping = mapping or DisplacementMap()
    keep = np.isin(labels.data, classes)
    if not keep.any():
        raise ValidationError(f"no images with labels in {classes}")
    pooled = _block_pool(images.data[keep], out_side)
    disp = mapping.to_displacement(pooled).reshape(keep.sum(), out_side * out_side)
    if binarize_pixels:
        disp = binarize(disp, mapping, threshold)
    record = {
        "classes": list(classes),
        "out_side": out_side,
        "crop": 24,
        "x_lo": mapping.x_lo,
        "x_hi": mapping.x_hi,
        "binarized": bool(binarize_pixels),
        "threshold": mapping.midpoint if threshold is None else float(threshold),
    }
    return Dataset(disp, source="mnist", preprocessing=record,
                   labels=labels.data[keep].astype(np.int64))


def save_dataset(ds: Dataset, path) -> None:
    """CSV of samples plus a JSON sidecar with provenance and labels."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)])
        for row in ds.samples:
            w.writerow([repr(float(v)) for v in row])
    meta = {"source": ds.source, "preprocessing": ds.preprocessing}
    if ds.labels is not None:
        meta["labels"] = ds.labels.tolist()
    sidecar = path.with_name(path.name + ".meta.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValidationError(f"dataset file {path} has no sample rows")
    samples = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    source, preprocessing, labels = "", {}, None
    sidecar = path.with_name(path.name + ".meta.json")
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.load(fh)
        source = meta.get("source", "")
        preprocessing = meta.get("preprocessing", {})
        if "labels" in meta:
            labels = np.asarray(meta["labels"], dtype=np.int64)
    return Dataset(samples, source=source, preprocessing=preprocessing, labels=labels)
