"""Evaluation and export: mode-weight recovery, Boltzmann landscape grids,
marginal overlays, image sheets, sample fidelity, and the coupling-range
ablation driver.

Everything writes plain text or portable graymaps; there is no plotting
dependency. The fidelity score for image tasks is an artifact convention
(nearest-neighbor distance gate plus nearest-centroid class assignment), not
a published metric.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, DisplacementMap, MixtureSpec, mixture_marginal
from .dynamics import IntegratorConfig, reverse_sample
from .errors import DimensionMismatchError, ValidationError
from .learning import TrainConfig, train_schedule
from .model import Topology, energy_hat
from .rng import STREAM_SAMPLE, STREAM_TRAIN, NoiseSource
from .schedule import Schedule


@dataclass(frozen=True)
class ModeReport:
    """Per-mode sample fractions against the target mixture weights."""

    fractions: np.ndarray
    targets: np.ndarray
    sampler_tag: str = "SGM"

    @property
    def abs_errors(self) -> np.ndarray:
        return np.abs(self.fractions - self.targets)

    @property
    def max_error(self) -> float:
        return float(self.abs_errors.max())


def mode_weights(samples, spec: MixtureSpec, sampler_tag: str = "SGM") -> ModeReport:
    """Assign each sample to the mixture component with the largest posterior."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise DimensionMismatchError("samples", "(S, 2)", x.shape)
    if spec.n_components < 2:
        raise ValidationError("mode assignment needs at least 2 components")
    if x.shape[0] == 0:
        raise ValidationError("no samples to assign")
    # Log-posterior up to a shared constant, stable via Cholesky solves.
    logps = np.empty((x.shape[0], spec.n_components))
    for i in range(spec.n_components):
        L = spec._chol[i]
        diff = x - spec.means[i]
        # L is 2x2 lower triangular; solve L y = diff directly
        y0 = diff[:, 0] / L[0, 0]
        y1 = (diff[:, 1] - L[1, 0] * y0) / L[1, 1]
        maha = y0 * y0 + y1 * y1
        logdet = 2.0 * (math.log(L[0, 0]) + math.log(L[1, 1]))
        logps[:, i] = math.log(spec.weights[i]) - 0.5 * (maha + logdet)
    assign = logps.argmax(axis=1)
    fractions = np.bincount(assign, minlength=spec.n_components) / x.shape[0]
    return ModeReport(fractions=fractions, targets=spec.weights.copy(), sampler_tag=sampler_tag)


def save_mode_report(report: ModeReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "fraction", "target", "abs_error", "sampler"])
        for i, (f, t) in enumerate(zip(report.fractions, report.targets)):
            w.writerow([i, repr(float(f)), repr(float(t)), repr(abs(float(f - t))), report.sampler_tag])


@dataclass(frozen=True)
class EnergyGrid:
    """E_hat on a 2D grid with its Boltzmann normalization."""

    x1: np.ndarray
    x2: np.ndarray
    energies: np.ndarray  # (len(x1), len(x2))
    density: np.ndarray
    log_z: float
    kbt: float

    @property
    def z(self) -> float:
        return math.exp(self.log_z)


def energy_grid(schedule: Schedule, t: float = 0.0,
                ranges: Sequence[Sequence[float]] = ((-1.5, 1.5), (-1.5, 1.5)),
                resolution: int = 201, kbt: Optional[float] = None) -> EnergyGrid:
    """Evaluate E_hat at theta(t) on a grid and normalize exp(-E_hat/kbt).

    Only defined for 2-oscillator schedules (the planar landscape export).
    The partition function uses trapezoidal quadrature; density values are
    computed relative to the grid minimum so tiny kbt cannot overflow.
    kbt defaults to the schedule's training temperature.
    """
    if kbt is None:
        kbt = schedule.kbt
    topo = schedule.topology
    if topo.n_oscillators != 2:
        raise DimensionMismatchError("landscape export topology", 2, topo.n_oscillators)
    if resolution < 2:
        raise ValidationError("resolution must be at least 2")
    (lo1, hi1), (lo2, hi2) = ranges
    if not (lo1 < hi1 and lo2 < hi2):
        raise ValidationError("grid ranges must be increasing")
    params = schedule.params_at(t)
    x1 = np.linspace(lo1, hi1, resolution)
    x2 = np.linspace(lo2, hi2, resolution)
    pts = np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1).reshape(-1, 2)
    e = np.asarray(energy_hat(params, topo, pts)).reshape(resolution, resolution)
    e_min = e.min()
    rel = np.exp(-(e - e_min) / kbt)
    z_rel = np.trapezoid(np.trapezoid(rel, x2, axis=1), x1)
    if not (z_rel > 0 and np.isfinite(z_rel)):
        raise ValidationError("degenerate Boltzmann normalization on this grid")
    density = rel / z_rel
    log_z = math.log(z_rel) - e_min / kbt
    return EnergyGrid(x1=x1, x2=x2, energies=e, density=density, log_z=log_z, kbt=kbt)


def save_energy_grid(grid: EnergyGrid, path, which: str = "energy") -> None:
    """Delimited text: two axis header lines, then the matrix row by row."""
    mat = grid.energies if which == "energy" else grid.density
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x1 " + " ".join(repr(float(v)) for v in grid.x1) + "\n")
        fh.write("# x2 " + " ".join(repr(float(v)) for v in grid.x2) + "\n")
        fh.write(f"# kbt {grid.kbt!r} log_z {grid.log_z!r} values {which}\n")
        for row in mat:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class MarginalHistogram:
    axis: int
    edges: np.ndarray
    density: np.ndarray
    centers: np.ndarray
    overlay: Optional[np.ndarray]  # exact marginal at bin centers, if a spec was given


def marginal_histogram(samples, axis: int, bins: int = 50,
                       spec: Optional[MixtureSpec] = None,
                       value_range: Optional[tuple] = None) -> MarginalHistogram:
    """Density-normalized histogram of one coordinate, with the exact
    mixture marginal evaluated at bin centers when a spec is supplied."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"samples must be 2D, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValidationError("no samples")
    if not 0 <= axis < x.shape[1]:
        raise ValidationError(f"axis {axis} out of range for dimension {x.shape[1]}")
    if bins < 10:
        raise ValidationError("use at least 10 bins")
    density, edges = np.histogram(x[:, axis], bins=bins, range=value_range, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    overlay = None
    if spec is not None:
        overlay = np.asarray(mixture_marginal(spec, axis, centers))
    return MarginalHistogram(axis=axis, edges=edges, density=density,
                             centers=centers, overlay=overlay)


def save_marginal(h: MarginalHistogram, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        header = ["bin_center", "bin_lo", "bin_hi", "density"]
        if h.overlay is not None:
            header.append("exact_marginal")
        w.writerow(header)
        for i, c in enumerate(h.centers):
            row = [repr(float(c)), repr(float(h.edges[i])), repr(float(h.edges[i + 1])),
                   repr(float(h.density[i]))]
            if h.overlay is not None:
                row.append(repr(float(h.overlay[i])))
            w.writerow(row)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValidationError("PGM export needs a 2D array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValidationError(f"{path} is not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValidationError("only 8-bit PGM supported")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValidationError("PGM payload truncated")
    return data.reshape(h, w)


def image_sheet(samples, grid_shape: tuple, path=None,
                mapping: Optional[DisplacementMap] = None,
                separator: int = 1, separator_gray: int = 128) -> np.ndarray:
    """Tile displacement samples into one grayscale sheet.

    Each sample of length rows*cols becomes a tile via the inverse
    displacement map; tiles are laid out near-square with 1-pixel
    separators. Returns the sheet; writes a P5 graymap when path is given.
    """
    rows, cols = grid_shape
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[1] != rows * cols:
        raise DimensionMismatchError("samples", rows * cols, x.shape[1])
    mapping = mapping or DisplacementMap()
    tiles = mapping.to_pixels(x).reshape(-1, rows, cols)
    s = tiles.shape[0]
    sheet_cols = int(math.ceil(math.sqrt(s)))
    sheet_rows = int(math.ceil(s / sheet_cols))
    h = sheet_rows * rows + (sheet_rows + 1) * separator
    w = sheet_cols * cols + (sheet_cols + 1) * separator
    sheet = np.full((h, w), separator_gray, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, sheet_cols)
        top = separator + r * (rows + separator)
        left = separator + c * (cols + separator)
        sheet[top : top + rows, left : left + cols] = tile
    if path is not None:
        write_pgm(path, sheet)
    return sheet


def _pairwise_min_dist(a: np.ndarray, b: np.ndarray, skip_self: bool = False,
                       chunk: int = 512) -> np.ndarray:
    """Per-row minimum Euclidean distance from a to b, chunked."""
    out = np.empty(a.shape[0])
    b_sq = np.einsum("ij,ij->i", b, b)
    for lo in range(0, a.shape[0], chunk):
        hi = min(lo + chunk, a.shape[0])
        blk = a[lo:hi]
        d2 = blk @ b.T
        d2 = np.einsum("ij,ij->i", blk, blk)[:, None] - 2.0 * d2 + b_sq
        if skip_self:
            idx = np.arange(lo, hi)
            d2[np.arange(hi - lo), idx] = np.inf
        out[lo:hi] = np.sqrt(np.maximum(d2, 0.0).min(axis=1))
    return out


@dataclass(frozen=True)
class FidelityReport:
    """Distance-gated sample quality against a labeled training set.

    Each sample is assigned to its nearest class centroid; it counts as well
    assigned when its per-pixel RMS distance to that centroid sits below the
    95th percentile of the training images' distances to their own class
    centroid. The centroid gate alone cannot see blur toward the global
    mean, so the composite score subtracts the span-normalized mean
    nearest-neighbor distance to the training set.
    """

    assignment_rate: float
    mean_nn_distance: float
    threshold: float
    score: float
    class_counts: dict


def fidelity_score(samples, train: Dataset,
                   mapping: Optional[DisplacementMap] = None) -> FidelityReport:
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    ref = train.samples
    if x.shape[1] != ref.shape[1]:
        raise DimensionMismatchError("samples", ref.shape[1], x.shape[1])
    if train.labels is None:
        raise ValidationError("fidelity scoring needs a labeled training set")
    mapping = mapping or DisplacementMap()
    span = mapping.x_hi - mapping.x_lo
    root_n = math.sqrt(ref.shape[1])

    labels = np.unique(train.labels)
    centroids = np.stack([ref[train.labels == c].mean(axis=0) for c in labels])
    own = np.concatenate([
        np.linalg.norm(ref[train.labels == c] - centroids[i], axis=1)
        for i, c in enumerate(labels)]) / root_n
    threshold = float(np.percentile(own, 95.0))

    d_cent = np.sqrt(((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)) / root_n
    nearest = d_cent.min(axis=1)
    assigned = labels[d_cent.argmin(axis=1)]
    rate = float((nearest <= threshold).mean())
    counts = {int(c): int((assigned == c).sum()) for c in labels}

    nn = _pairwise_min_dist(x, ref) / root_n
    mean_nn = float(nn.mean())

    score = rate - mean_nn / span
    return FidelityReport(assignment_rate=rate, mean_nn_distance=mean_nn,
                          threshold=threshold, score=score, class_counts=counts)


@dataclass(frozen=True)
class AblationRow:
    coupling_range: float
    n_edges: int
    assignment_rate: float
    mean_nn_distance: float
    score: float


@dataclass(frozen=True)
class AblationReport:
    rows: tuple
    grid_shape: tuple

    def row_for(self, r: float) -> AblationRow:
        for row in self.rows:
            if row.coupling_range == r:
                return row
        raise KeyError(r)


def save_ablation_table(report: AblationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coupling_range", "n_edges", "assignment_rate", "mean_nn_distance", "score"])
        for row in report.rows:
            w.writerow([repr(float(row.coupling_range)), row.n_edges,
                        repr(row.assignment_rate), repr(row.mean_nn_distance), repr(row.score)])


def ablation_run(dataset: Dataset, grid_shape: tuple, ranges: Sequence[float],
                 train_cfg: TrainConfig, dt: Optional[float] = None,
                 n_eval_samples: int = 200, rule: str = "force_matching",
                 seed: int = 0, metric: str = "euclidean",
                 out_dir=None, mapping: Optional[DisplacementMap] = None) -> AblationReport:
    """Train, sample, and score the image task once per coupling range.

    Per-range noise streams are keyed by the range value itself, so each
    row is reproducible independently of which other ranges run or in
    what order.
    """
    if not ranges:
        raise ValidationError("ranges must be nonempty")
    rows_, cols_ = grid_shape
    if dataset.dim != rows_ * cols_:
        raise DimensionMismatchError("dataset", rows_ * cols_, dataset.dim)
    dt = dt if dt is not None else train_cfg.tau / 800.0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for r in ranges:
        key = int(np.float64(r).view(np.uint64))
        topo = Topology.from_grid(rows_, cols_, r, metric=metric)
        train_noise = NoiseSource(seed, STREAM_TRAIN).child(key)
        sched = train_schedule(dataset, topo, train_cfg, rule=rule, noise=train_noise)
        cfg = IntegratorConfig(dt=dt, kbt=train_cfg.kbt)
        samp_noise = NoiseSource(seed, STREAM_SAMPLE).child(key)
        samples = reverse_sample(sched, cfg, samp_noise, n_eval_samples)
        rep = fidelity_score(samples, dataset, mapping)
        rows.append(AblationRow(coupling_range=float(r), n_edges=topo.n_edges,
                                assignment_rate=rep.assignment_rate,
                                mean_nn_distance=rep.mean_nn_distance, score=rep.score))
        if out_dir is not None:
            image_sheet(samples, grid_shape, out_dir / f"sheet_range_{r}.pgm", mapping)
    report = AblationReport(rows=tuple(rows), grid_shape=tuple(grid_shape))
    if out_dir is not None:
        save_ablation_table(report, out_dir / "ablation.csv")
    return report
