"""Driving protocols: a parameter snapshot per time knot, plus file round trip.

A schedule holds the learned parameters on a grid of N_t knots over [0, tau]
together with the training temperature. Parameters between knots are obtained
by componentwise linear interpolation (the minimal rule; the file header
records it so other interpolants stay possible). Files are line-oriented
UTF-8 text with repr() floats so a save/load round trip is bit exact; a
sha256 checksum over the body guards against truncation and edits.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    ScheduleChecksumError,
    ScheduleSchemaError,
    ScheduleVersionError,
    ValidationError,
)
from .model import (
    KIND_ORDER,
    EnergyParams,
    Topology,
    flatten_params,
    kind_array,
    unflatten_params,
)

FORMAT_NAME = "oscsgm-schedule"
FORMAT_VERSION = 1


class TimeGrid:
    """Knots t_0 = 0 < t_1 < ... < t_{N_t-1} = tau; uniform unless given."""

    def __init__(self, tau: float, n_points: int, times: Optional[Sequence[float]] = None):
        if tau <= 0:
            raise ValidationError(f"tau must be positive, got {tau}")
        if n_points < 2:
            raise ValidationError(f"need at least 2 time points, got {n_points}")
        if times is None:
            t = np.linspace(0.0, float(tau), n_points)
        else:
            t = np.asarray(times, dtype=np.float64)
            if t.shape != (n_points,):
                raise DimensionMismatchError("times", (n_points,), t.shape)
            if t[0] != 0.0 or t[-1] != tau:
                raise ValidationError("times must start at 0 and end at tau exactly")
            if np.any(np.diff(t) <= 0):
                raise ValidationError("times must be strictly increasing")
        t.setflags(write=False)
        self.tau = float(tau)
        self.n_points = int(n_points)
        self._times = t

    @classmethod
    def geometric(cls, tau: float, n_points: int, growth: float = 1.5) -> "TimeGrid":
        """Knot spacing growing by `growth` per interval (finer near t=0)."""
        if growth <= 0:
            raise ValidationError("growth must be positive")
        steps = growth ** np.arange(n_points - 1)
        t = np.concatenate([[0.0], np.cumsum(steps)])
        t *= tau / t[-1]
        t[-1] = tau
        return cls(tau, n_points, t)

    def times(self) -> np.ndarray:
        return self._times

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return (self.tau == other.tau and self.n_points == other.n_points
                and np.array_equal(self._times, other._times))

    def __repr__(self) -> str:
        return f"TimeGrid(tau={self.tau!r}, n_points={self.n_points})"


class Schedule:
    """Immutable sequence of parameter snapshots on a TimeGrid."""

    def __init__(self, grid: TimeGrid, topology: Topology,
                 snapshots: Sequence[EnergyParams], kbt: float = 0.005):
        if len(snapshots) != grid.n_points:
            raise DimensionMismatchError("snapshots", (grid.n_points,), (len(snapshots),))
        for p in snapshots:
            if p.n_nodes != topology.n_oscillators or p.n_edges != topology.n_edges:
                raise DimensionMismatchError(
                    "snapshot", (topology.n_oscillators, topology.n_edges), (p.n_nodes, p.n_edges))
        if not kbt > 0:
            raise ValidationError(f"kbt must be positive, got {kbt}")
        self.grid = grid
        self.topology = topology
        self.snapshots = tuple(snapshots)
        self.kbt = float(kbt)
        self._flat = np.stack([flatten_params(p) for p in snapshots])
        self._flat.setflags(write=False)

    @property
    def flat(self) -> np.ndarray:
        """(n_points, n_params) view of all snapshots in frozen order."""
        return self._flat

    def _check_t(self, t: float) -> float:
        t = float(t)
        # forgive pure rounding spill at the endpoints
        eps = 1e-12 * self.grid.tau
        if not (-eps <= t <= self.grid.tau + eps):
            raise ValidationError(f"time {t} outside the protocol range [0, {self.grid.tau}]")
        return min(max(t, 0.0), self.grid.tau)

    def interp_flat(self, t: float) -> np.ndarray:
        """Componentwise linear interpolation of the flat parameter vector."""
        t = self._check_t(t)
        times = self.grid.times()
        k = int(np.searchsorted(times, t, side="right")) - 1
        if k >= self.grid.n_points - 1:
            return self._flat[-1].copy()
        if t == times[k]:
            return self._flat[k].copy()
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * self._flat[k] + w * self._flat[k + 1]

    def params_at(self, t: float) -> EnergyParams:
        """Parameters at forward time t; exact snapshot at the knots."""
        t = self._check_t(t)
        times = self.grid.times()
        k = int(np.searchsorted(times, t, side="right")) - 1
        if k >= self.grid.n_points - 1:
            return self.snapshots[-1]
        if t == times[k]:
            return self.snapshots[k]
        return unflatten_params(self.interp_flat(t), self.topology)

    def reverse_params_at(self, t: float) -> EnergyParams:
        """Parameters driving reverse time t (protocol applied backwards)."""
        return self.params_at(self.grid.tau - self._check_t(t))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return (self.grid == other.grid
                and self.kbt == other.kbt
                and self.topology.fingerprint() == other.topology.fingerprint()
                and np.array_equal(self._flat, other._flat))

    @classmethod
    def constant(cls, grid: TimeGrid, topology: Topology, params: EnergyParams,
                 kbt: float = 0.005) -> "Schedule":
        return cls(grid, topology, [params] * grid.n_points, kbt=kbt)


def _emit(sched: Schedule) -> str:
    topo = sched.topology
    buf = io.StringIO()
    w = buf.write
    w(f"{FORMAT_NAME} v{FORMAT_VERSION}\n")
    w(f"tau {sched.grid.tau!r}\n")
    w(f"n_points {sched.grid.n_points}\n")
    w(f"kbt {sched.kbt!r}\n")
    w("interpolation linear\n")
    w("times " + " ".join(repr(float(t)) for t in sched.grid.times()) + "\n")
    w(f"n_oscillators {topo.n_oscillators}\n")
    w(f"n_edges {topo.n_edges}\n")
    w("edges " + " ".join(f"{a},{b}" for a, b in topo.edges) + "\n")
    if topo.grid is not None:
        w(f"grid {topo.grid[0]} {topo.grid[1]}\n")
    if topo.coupling_range is not None:
        w(f"coupling_range {topo.coupling_range!r} {topo.metric}\n")
    w(f"topology_fingerprint {topo.fingerprint()}\n")
    for k, p in enumerate(sched.snapshots):
        w(f"snapshot {k}\n")
        for kind in KIND_ORDER:
            vals = kind_array(p, kind)
            w(kind.value + " " + " ".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue()


def save_schedule(sched: Schedule, path) -> None:
    body = _emit(sched)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(body)
        fh.write(f"checksum sha256 {digest}\n")


def _parse_floats(line: str, label: str, expected: int, lineno: int) -> np.ndarray:
    parts = line.split()
    if parts[0] != label:
        raise ScheduleSchemaError(f"line {lineno}: expected '{label}', got '{parts[0]}'")
    try:
        vals = np.array([float(v) for v in parts[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ScheduleSchemaError(f"line {lineno}: bad float in '{label}': {exc}") from None
    if vals.shape[0] != expected:
        raise ScheduleSchemaError(
            f"line {lineno}: '{label}' has {vals.shape[0]} values, expected {expected}")
    return vals


def load_schedule(path) -> Schedule:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.splitlines()
    if not lines:
        raise ScheduleSchemaError("empty schedule file")
    if not lines[-1].startswith("checksum sha256 "):
        raise ScheduleChecksumError("missing checksum line")
    stated = lines[-1].split()[-1]
    body = raw[: raw.rindex("checksum sha256 ")]
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if stated != actual:
        raise ScheduleChecksumError(
            f"checksum mismatch: file says {stated[:12]}.., body is {actual[:12]}..")

    header = lines[0].split()
    if len(header) != 2 or header[0] != FORMAT_NAME:
        raise ScheduleSchemaError(f"not a schedule file (first line: '{lines[0][:40]}')")
    if header[1] != f"v{FORMAT_VERSION}":
        raise ScheduleVersionError(
            f"unsupported format version '{header[1]}' (this build reads v{FORMAT_VERSION})")

    fields: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("snapshot "):
        key, _, rest = lines[i].partition(" ")
        fields[key] = rest
        i += 1
    try:
        tau = float(fields["tau"])
        n_points = int(fields["n_points"])
        kbt = float(fields["kbt"])
        n_osc = int(fields["n_oscillators"])
        n_edges = int(fields["n_edges"])
    except KeyError as exc:
        raise ScheduleSchemaError(f"missing header field {exc}") from None
    except ValueError as exc:
        raise ScheduleSchemaError(f"bad header value: {exc}") from None
    if fields.get("interpolation", "linear") != "linear":
        raise ScheduleSchemaError(
            f"unsupported interpolation '{fields['interpolation']}' (this build reads linear)")
    try:
        times = np.array([float(v) for v in fields["times"].split()], dtype=np.float64)
    except (KeyError, ValueError):
        raise ScheduleSchemaError("missing or bad times line") from None
    edge_field = fields.get("edges", "")
    try:
        edges = tuple(tuple(int(v) for v in tok.split(",")) for tok in edge_field.split())
    except ValueError:
        raise ScheduleSchemaError("bad edge list") from None
    if len(edges) != n_edges:
        raise ScheduleSchemaError(f"edge list has {len(edges)} pairs, header says {n_edges}")
    grid_dims = None
    if "grid" in fields:
        parts = fields["grid"].split()
        if len(parts) != 2:
            raise ScheduleSchemaError("bad grid line")
        grid_dims = (int(parts[0]), int(parts[1]))
    coupling_range, metric = None, "euclidean"
    if "coupling_range" in fields:
        parts = fields["coupling_range"].split()
        coupling_range = float(parts[0])
        if len(parts) > 1:
            metric = parts[1]
    try:
        topo = Topology(n_osc, edges, grid=grid_dims, coupling_range=coupling_range, metric=metric)
        grid = TimeGrid(tau, n_points, times)
    except ValidationError as exc:
        raise ScheduleSchemaError(f"invalid header data: {exc}") from None
    if "topology_fingerprint" in fields and fields["topology_fingerprint"] != topo.fingerprint():
        raise ScheduleSchemaError("topology fingerprint does not match the stored edge list")

    snapshots = []
    expected_counts = {k: (n_osc if k in KIND_ORDER[:4] else n_edges) for k in KIND_ORDER}
    while i < len(lines) and lines[i].startswith("snapshot "):
        try:
            k = int(lines[i].split()[1])
        except (IndexError, ValueError):
            raise ScheduleSchemaError(f"line {i + 1}: bad snapshot header") from None
        if k != len(snapshots):
            raise ScheduleSchemaError(
                f"line {i + 1}: snapshot {k} out of order (expected {len(snapshots)})")
        i += 1
        arrays = []
        for kind in KIND_ORDER:
            if i >= len(lines):
                raise ScheduleSchemaError(f"truncated snapshot {k}: missing '{kind.value}'")
            arrays.append(_parse_floats(lines[i], kind.value, expected_counts[kind], i + 1))
            i += 1
        try:
            snapshots.append(EnergyParams(*arrays))
        except ValidationError as exc:
            raise ScheduleSchemaError(f"snapshot {k}: {exc}") from None
    if i < len(lines) and not lines[i].startswith("checksum "):
        raise ScheduleSchemaError(f"line {i + 1}: unexpected content '{lines[i][:40]}'")
    if len(snapshots) != n_points:
        raise ScheduleSchemaError(f"file has {len(snapshots)} snapshots, header says {n_points}")
    return Schedule(grid, topo, snapshots, kbt=kbt)
