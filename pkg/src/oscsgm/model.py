"""Oscillator network topology and the polynomial energy family.

The network energy is a linear combination of fixed basis polynomials:

    E_hat(x) = sum_n [ alpha_n x_n^2/2 + beta_n x_n^4/4 + gamma_n x_n^6/6 + f_n x_n ]
             + sum_(n,m) [ kappa (x_n-x_m)^2/2 + lambda (x_n-x_m)^4/4
                           + chi x_n x_m^2 + chi_hat x_n^2 x_m ]

with one (alpha, beta, gamma, f_ext) tuple per node and one
(kappa, lambda, chi, chi_hat) tuple per edge. gamma_n > 0 keeps the energy
coercive. All evaluation here is analytic; nothing is differentiated
numerically.

Parameter enumeration order is frozen (gradient vectors and schedule files
depend on it): alpha[0..N), beta[0..N), gamma[0..N), f_ext[0..N),
kappa[0..E), lambda[0..E), chi[0..E), chi_hat[0..E), with edges sorted
lexicographically by (n, m).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, ValidationError

GAMMA_MIN_DEFAULT = 0.001

_METRICS = ("euclidean", "chebyshev", "manhattan")


def _grid_distance(dr: int, dc: int, metric: str) -> float:
    if metric == "euclidean":
        return math.hypot(dr, dc)
    if metric == "chebyshev":
        return max(abs(dr), abs(dc))
    if metric == "manhattan":
        return abs(dr) + abs(dc)
    raise ValidationError(f"unknown grid metric '{metric}'")


def grid_edges(rows: int, cols: int, coupling_range: float, metric: str = "euclidean") -> list[tuple[int, int]]:
    """All node pairs (n, m), n < m, within `coupling_range` grid distance.

    Node n sits at (row, col) = divmod(n, cols), matching row-major image
    flattening. Lexicographic order by (n, m).
    """
    edges = []
    n_total = rows * cols
    for n in range(n_total):
        rn, cn = divmod(n, cols)
        for m in range(n + 1, n_total):
            rm, cm = divmod(m, cols)
            if _grid_distance(rm - rn, cm - cn, metric) <= coupling_range:
                edges.append((n, m))
    return edges


@dataclass(frozen=True)
class Topology:
    """Oscillator count, optional grid embedding, and the coupled pairs.

    Edges are stored sorted lexicographically; the edge index used by
    parameter arrays is the position in this sorted list. If both `grid`
    and `coupling_range` are given, the edge list must be exactly the
    pairs within range (checked at construction).
    """

    n_oscillators: int
    edges: tuple[tuple[int, int], ...]
    grid: Optional[tuple[int, int]] = None
    coupling_range: Optional[float] = None
    metric: str = "euclidean"

    def __post_init__(self):
        n = self.n_oscillators
        if n < 1:
            raise ValidationError(f"n_oscillators must be positive, got {n}")
        if self.metric not in _METRICS:
            raise ValidationError(f"unknown grid metric '{self.metric}'")
        if self.grid is not None:
            rows, cols = self.grid
            if rows * cols != n:
                raise ValidationError(f"grid {rows}x{cols} does not match n_oscillators={n}")
            object.__setattr__(self, "grid", (int(rows), int(cols)))
        edges = sorted((min(int(a), int(b)), max(int(a), int(b))) for a, b in self.edges)
        for a, b in edges:
            if a == b:
                raise ValidationError(f"self-coupling ({a}, {b}) is not allowed")
            if not (0 <= a < b < n):
                raise ValidationError(f"edge ({a}, {b}) out of range for N={n}")
        if len(set(edges)) != len(edges):
            raise ValidationError("duplicate edges")
        object.__setattr__(self, "edges", tuple(edges))
        if self.coupling_range is not None:
            if self.coupling_range <= 0:
                raise ValidationError("coupling_range must be positive")
            if self.grid is not None:
                expected = grid_edges(self.grid[0], self.grid[1], self.coupling_range, self.metric)
                if list(self.edges) != expected:
                    raise ValidationError(
                        "edge list does not match the grid/coupling_range construction "
                        f"({len(self.edges)} edges vs {len(expected)} expected)"
                    )
        # Cached index arrays for vectorized edge math.
        e = np.array(self.edges, dtype=np.intp).reshape(-1, 2)
        object.__setattr__(self, "_en", e[:, 0])
        object.__setattr__(self, "_em", e[:, 1])
        n_e = len(self.edges)
        ones = np.ones(n_e)
        idx = np.arange(n_e)
        # (N, E) incidence selectors: scatter per-edge endpoint contributions to nodes.
        object.__setattr__(self, "_scatter_n", sp.csr_matrix((ones, (e[:, 0], idx)), shape=(n, n_e)))
        object.__setattr__(self, "_scatter_m", sp.csr_matrix((ones, (e[:, 1], idx)), shape=(n, n_e)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_params(self) -> int:
        return 4 * self.n_oscillators + 4 * self.n_edges

    @classmethod
    def complete(cls, n: int) -> "Topology":
        """All-pairs coupling on n oscillators."""
        return cls(n, tuple((a, b) for a in range(n) for b in range(a + 1, n)))

    @classmethod
    def uncoupled(cls, n: int) -> "Topology":
        return cls(n, ())

    @classmethod
    def from_grid(cls, rows: int, cols: int, coupling_range: float, metric: str = "euclidean") -> "Topology":
        edges = grid_edges(rows, cols, coupling_range, metric)
        return cls(rows * cols, tuple(edges), grid=(rows, cols), coupling_range=coupling_range, metric=metric)

    def fingerprint(self) -> str:
        """sha256 over the canonical serialization of this topology."""
        parts = [f"N={self.n_oscillators}"]
        parts.append("grid=none" if self.grid is None else f"grid={self.grid[0]}x{self.grid[1]}")
        if self.coupling_range is None:
            parts.append("range=none")
        else:
            parts.append(f"range={self.coupling_range!r}:{self.metric}")
        parts.append("edges=" + ",".join(f"{a}-{b}" for a, b in self.edges))
        return hashlib.sha256(";".join(parts).encode()).hexdigest()


class ParamKind(enum.Enum):
    ALPHA = "alpha"
    BETA = "beta"
    GAMMA = "gamma"
    F_EXT = "f_ext"
    KAPPA = "kappa"
    LAMBDA = "lambda"
    CHI = "chi"
    CHI_HAT = "chi_hat"


NODE_KINDS = (ParamKind.ALPHA, ParamKind.BETA, ParamKind.GAMMA, ParamKind.F_EXT)
EDGE_KINDS = (ParamKind.KAPPA, ParamKind.LAMBDA, ParamKind.CHI, ParamKind.CHI_HAT)
KIND_ORDER = NODE_KINDS + EDGE_KINDS


@dataclass(frozen=True)
class ParamIndex:
    """One slot in the frozen parameter enumeration."""

    kind: ParamKind
    site: int  # node index for node kinds, edge index for edge kinds


def param_indices(topo: Topology) -> list[ParamIndex]:
    """All parameter slots in frozen enumeration order."""
    out = []
    for kind in KIND_ORDER:
        count = topo.n_oscillators if kind in NODE_KINDS else topo.n_edges
        out.extend(ParamIndex(kind, s) for s in range(count))
    return out


def _as_param_array(name: str, values, length: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (length,):
        raise DimensionMismatchError(name, (length,), arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite entries in '{name}'")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EnergyParams:
    """One snapshot of all energy parameters (immutable)."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    f_ext: np.ndarray
    kappa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chi_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        n = np.asarray(self.alpha).shape[0] if np.ndim(self.alpha) else 1
        for name in ("alpha", "beta", "gamma", "f_ext"):
            object.__setattr__(self, name, _as_param_array(name, getattr(self, name), n))
        n_e = np.asarray(self.kappa).shape[0]
        for name in ("kappa", "lambda_", "chi", "chi_hat"):
            object.__setattr__(self, name, _as_param_array(name, getattr(self, name), n_e))
        if np.any(self.gamma <= 0):
            raise ValidationError("gamma must be strictly positive (coercive energy)")

    @property
    def n_nodes(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_edges(self) -> int:
        return self.kappa.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnergyParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k.value if k is not ParamKind.LAMBDA else "lambda_"),
                           getattr(other, k.value if k is not ParamKind.LAMBDA else "lambda_"))
            for k in KIND_ORDER
        )

    @classmethod
    def zeros(cls, topo: Topology, gamma: float = GAMMA_MIN_DEFAULT) -> "EnergyParams":
        n, n_e = topo.n_oscillators, topo.n_edges
        return cls(np.zeros(n), np.zeros(n), np.full(n, gamma), np.zeros(n),
                   np.zeros(n_e), np.zeros(n_e), np.zeros(n_e), np.zeros(n_e))

    @classmethod
    def initial(cls, topo: Topology, alpha0: float = -1.0, beta0: float = 1.0,
                gamma0: float = 1.0) -> "EnergyParams":
        """Per-node double-well start (couplings and forces zero)."""
        n, n_e = topo.n_oscillators, topo.n_edges
        return cls(np.full(n, alpha0), np.full(n, beta0), np.full(n, gamma0), np.zeros(n),
                   np.zeros(n_e), np.zeros(n_e), np.zeros(n_e), np.zeros(n_e))


_ATTR_BY_KIND = {
    ParamKind.ALPHA: "alpha", ParamKind.BETA: "beta", ParamKind.GAMMA: "gamma",
    ParamKind.F_EXT: "f_ext", ParamKind.KAPPA: "kappa", ParamKind.LAMBDA: "lambda_",
    ParamKind.CHI: "chi", ParamKind.CHI_HAT: "chi_hat",
}


def kind_array(params: EnergyParams, kind: ParamKind) -> np.ndarray:
    return getattr(params, _ATTR_BY_KIND[kind])


def flatten_params(params: EnergyParams) -> np.ndarray:
    """Pack a snapshot into one vector in the frozen enumeration order."""
    return np.concatenate([kind_array(params, k) for k in KIND_ORDER])


def unflatten_params(theta: np.ndarray, topo: Topology) -> EnergyParams:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (topo.n_params,):
        raise DimensionMismatchError("theta", (topo.n_params,), theta.shape)
    n, n_e = topo.n_oscillators, topo.n_edges
    cuts = np.cumsum([n, n, n, n, n_e, n_e, n_e])
    parts = np.split(theta, cuts)
    return EnergyParams(*parts)


def flat_slices(topo: Topology) -> dict[ParamKind, slice]:
    """Slice of each parameter kind within the flat vector."""
    n, n_e = topo.n_oscillators, topo.n_edges
    sizes = [n, n, n, n, n_e, n_e, n_e, n_e]
    out, start = {}, 0
    for kind, size in zip(KIND_ORDER, sizes):
        out[kind] = slice(start, start + size)
        start += size
    return out


def _check_state(topo: Topology, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != topo.n_oscillators:
        raise DimensionMismatchError("x", topo.n_oscillators, arr.shape)
    return arr


def _check_params(params: EnergyParams, topo: Topology) -> None:
    if params.n_nodes != topo.n_oscillators:
        raise DimensionMismatchError("params.alpha", (topo.n_oscillators,), (params.n_nodes,))
    if params.n_edges != topo.n_edges:
        raise DimensionMismatchError("params.kappa", (topo.n_edges,), (params.n_edges,))


def energy_hat(params: EnergyParams, topo: Topology, x) -> float | np.ndarray:
    """Evaluate E_hat(x). Accepts a single state (N,) or a batch (..., N)."""
    _check_params(params, topo)
    xa = _check_state(topo, x)
    x2 = xa * xa
    local = (0.5 * params.alpha * x2 + 0.25 * params.beta * x2 * x2
             + (params.gamma / 6.0) * x2 * x2 * x2 + params.f_ext * xa).sum(axis=-1)
    if topo.n_edges:
        xn = xa[..., topo._en]
        xm = xa[..., topo._em]
        d = xn - xm
        d2 = d * d
        pair = (0.5 * params.kappa * d2 + 0.25 * params.lambda_ * d2 * d2
                + params.chi * xn * xm * xm + params.chi_hat * xn * xn * xm).sum(axis=-1)
        local = local + pair
    return float(local) if np.ndim(local) == 0 else local


def grad_energy_hat(params: EnergyParams, topo: Topology, x) -> np.ndarray:
    """Analytic gradient of E_hat w.r.t. the state, batched like `x`."""
    _check_params(params, topo)
    xa = _check_state(topo, x)
    X = xa.reshape(-1, topo.n_oscillators)
    x2 = X * X
    g = X * (params.alpha + x2 * (params.beta + x2 * params.gamma)) + params.f_ext
    if topo.n_edges:
        xn = X[:, topo._en]
        xm = X[:, topo._em]
        d = xn - xm
        sym = params.kappa * d + params.lambda_ * d * d * d
        # d/dx_n of the pair energy, then d/dx_m.
        gn = sym + params.chi * xm * xm + 2.0 * params.chi_hat * xn * xm
        gm = -sym + 2.0 * params.chi * xn * xm + params.chi_hat * xn * xn
        g = g + (topo._scatter_n @ gn.T).T + (topo._scatter_m @ gm.T).T
    return g.reshape(xa.shape)


def force_hat(params: EnergyParams, topo: Topology, x) -> np.ndarray:
    """Restoring force of the parameterized energy: -grad E_hat(x)."""
    return -grad_energy_hat(params, topo, x)


def hessian_trace_hat(params: EnergyParams, topo: Topology, x) -> float | np.ndarray:
    """Trace of the Hessian of E_hat at x (analytic), batched like `x`."""
    _check_params(params, topo)
    xa = _check_state(topo, x)
    x2 = xa * xa
    tr = (params.alpha + 3.0 * params.beta * x2 + 5.0 * params.gamma * x2 * x2).sum(axis=-1)
    if topo.n_edges:
        xn = xa[..., topo._en]
        xm = xa[..., topo._em]
        d = xn - xm
        tr = tr + (2.0 * params.kappa + 6.0 * params.lambda_ * d * d
                   + 2.0 * params.chi * xn + 2.0 * params.chi_hat * xm).sum(axis=-1)
    return float(tr) if np.ndim(tr) == 0 else tr


def total_inference_force(params: EnergyParams, topo: Topology, x) -> np.ndarray:
    """Force applied at inference time: 2 * force_hat(x) + x."""
    xa = _check_state(topo, x)
    return 2.0 * force_hat(params, topo, xa) + xa


@dataclass(frozen=True)
class BasisEval:
    value: float
    grad: np.ndarray
    hess_trace: float


def basis_eval(idx: ParamIndex, topo: Topology, x) -> BasisEval:
    """Basis polynomial phi_i = dE_hat/dtheta_i with its gradient and Hessian trace.

    Independent of the parameter values (the energy is linear in theta).
    """
    xa = _check_state(topo, x)
    if xa.ndim != 1:
        raise ValidationError("basis_eval takes a single state, not a batch")
    n = topo.n_oscillators
    grad = np.zeros(n)
    if idx.kind in NODE_KINDS:
        if not 0 <= idx.site < n:
            raise ValidationError(f"node index {idx.site} out of range for N={n}")
        v = xa[idx.site]
        if idx.kind is ParamKind.ALPHA:
            grad[idx.site] = v
            return BasisEval(0.5 * v * v, grad, 1.0)
        if idx.kind is ParamKind.BETA:
            grad[idx.site] = v ** 3
            return BasisEval(0.25 * v ** 4, grad, 3.0 * v * v)
        if idx.kind is ParamKind.GAMMA:
            grad[idx.site] = v ** 5
            return BasisEval(v ** 6 / 6.0, grad, 5.0 * v ** 4)
        grad[idx.site] = 1.0
        return BasisEval(v, grad, 0.0)
    if not 0 <= idx.site < topo.n_edges:
        raise ValidationError(f"edge index {idx.site} out of range for E={topo.n_edges}")
    a, b = topo.edges[idx.site]
    xn, xm = xa[a], xa[b]
    d = xn - xm
    if idx.kind is ParamKind.KAPPA:
        grad[a], grad[b] = d, -d
        return BasisEval(0.5 * d * d, grad, 2.0)
    if idx.kind is ParamKind.LAMBDA:
        grad[a], grad[b] = d ** 3, -(d ** 3)
        return BasisEval(0.25 * d ** 4, grad, 6.0 * d * d)
    if idx.kind is ParamKind.CHI:
        grad[a], grad[b] = xm * xm, 2.0 * xn * xm
        return BasisEval(xn * xm * xm, grad, 2.0 * xn)
    grad[a], grad[b] = 2.0 * xn * xm, xn * xn
    return BasisEval(xn * xn * xm, grad, 2.0 * xm)


def basis_values_batch(topo: Topology, X: np.ndarray, kind: ParamKind) -> np.ndarray:
    """phi_i(x) for all sites of one kind, batched: (B, N) -> (B, count)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if kind in NODE_KINDS:
        if kind is ParamKind.ALPHA:
            return 0.5 * X * X
        if kind is ParamKind.BETA:
            return 0.25 * X ** 4
        if kind is ParamKind.GAMMA:
            return X ** 6 / 6.0
        return X.copy()
    xn = X[:, topo._en]
    xm = X[:, topo._em]
    if kind is ParamKind.KAPPA:
        d = xn - xm
        return 0.5 * d * d
    if kind is ParamKind.LAMBDA:
        d = xn - xm
        return 0.25 * d ** 4
    if kind is ParamKind.CHI:
        return xn * xm * xm
    return xn * xn * xm
