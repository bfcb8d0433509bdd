"""Learning rules and the sequential-in-time training driver.

The score-matching objective for the energy family,

    J_SM = E_x[ -Tr Hess E_hat(x)/kbt + |grad E_hat(x)|^2 / (2 kbt^2) ],

is linear-quadratic in the parameters, and its exact gradient per parameter
needs only per-site force measurements (force matching). The one-step
contrastive-divergence estimator contrasts basis values before and after a
single Langevin step of length delta and converges to the same gradient as
delta -> 0 after rescaling by -1/(delta kbt^2).

Training sweeps the diffusion time grid forward, warm-starting each knot from
the previous one, drawing a fresh minibatch through the exact forward kernel
at every optimizer step, and projecting gamma back to [gamma_min, inf) after
every update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import forward_kernel_sample, _as_generator
from .errors import TrainingDivergedError, ValidationError
from .model import (
    EDGE_KINDS,
    KIND_ORDER,
    NODE_KINDS,
    GAMMA_MIN_DEFAULT,
    EnergyParams,
    ParamKind,
    Topology,
    basis_values_batch,
    flat_slices,
    flatten_params,
    force_hat,
    grad_energy_hat,
    hessian_trace_hat,
    unflatten_params,
)
from .rng import STREAM_TRAIN, NoiseSource
from .schedule import Schedule, TimeGrid


@dataclass(frozen=True)
class TrainConfig:
    kbt: float = 0.005
    tau: float = 4.0
    n_times: int = 15
    batch_size: int = 256
    steps_per_time: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # or "sgd"
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    gamma_min: float = GAMMA_MIN_DEFAULT
    alpha0: float = -1.0
    beta0: float = 1.0
    gamma0: float = 1.0
    seed: int = 0
    # Parameter kinds held at their initialization (by name, e.g. "beta").
    frozen_kinds: tuple = ()
    log_every: int = 100

    def __post_init__(self):
        for name in ("kbt", "tau", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.n_times < 2:
            raise ValidationError("n_times must be at least 2")
        if self.batch_size < 1 or self.steps_per_time < 0:
            raise ValidationError("batch_size must be >= 1 and steps_per_time >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer '{self.optimizer}'")
        if self.gamma_min <= 0:
            raise ValidationError("gamma_min must be positive")
        if self.gamma0 < self.gamma_min:
            raise ValidationError("gamma0 must satisfy the gamma_min bound")
        valid = {k.value for k in KIND_ORDER}
        for name in self.frozen_kinds:
            if name not in valid:
                raise ValidationError(f"unknown parameter kind '{name}' in frozen_kinds")


@dataclass(frozen=True)
class CD1Config:
    delta: float = 1e-3
    n_noise: int = 64
    antithetic: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValidationError("delta must be positive")
        if self.delta > 1e-2:
            import warnings
            warnings.warn(f"CD1 delta={self.delta} is large; the SM equivalence degrades", stacklevel=2)
        if self.n_noise < 1:
            raise ValidationError("n_noise must be >= 1")
        if self.antithetic and self.n_noise % 2:
            raise ValidationError("antithetic pairs need an even n_noise")


def _check_batch(topo: Topology, batch) -> np.ndarray:
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != topo.n_oscillators:
        raise ValidationError(f"batch must be (M, {topo.n_oscillators}), got {X.shape}")
    if X.shape[0] == 0:
        raise ValidationError("empty batch")
    return X


def sm_loss(params: EnergyParams, topo: Topology, batch, kbt: float) -> float:
    """Score-matching objective averaged over the batch."""
    X = _check_batch(topo, batch)
    tr = hessian_trace_hat(params, topo, X)
    g = grad_energy_hat(params, topo, X)
    return float(np.mean(-tr / kbt + 0.5 * np.sum(g * g, axis=1) / kbt ** 2))


def force_matching_grad(params: EnergyParams, topo: Topology, batch, kbt: float) -> np.ndarray:
    """Exact gradient of sm_loss in the frozen parameter order.

    Per parameter: mean_x[ -Tr Hess phi_i(x)/kbt + grad phi_i(x).grad E_hat(x)/kbt^2 ],
    with grad E_hat obtained as -force_hat (the force measurement).
    """
    X = _check_batch(topo, batch)
    G = grad_energy_hat(params, topo, X)  # (M, N)
    ikbt, ikbt2 = 1.0 / kbt, 1.0 / kbt ** 2
    x2 = X * X
    parts = [
        (-ikbt + X * G * ikbt2).mean(axis=0),                     # alpha
        (-3.0 * x2 * ikbt + X * x2 * G * ikbt2).mean(axis=0),     # beta
        (-5.0 * x2 * x2 * ikbt + X * x2 * x2 * G * ikbt2).mean(axis=0),  # gamma
        (G * ikbt2).mean(axis=0),                                 # f_ext
    ]
    if topo.n_edges:
        xn, xm = X[:, topo._en], X[:, topo._em]
        gn, gm = G[:, topo._en], G[:, topo._em]
        d = xn - xm
        gd = gn - gm
        parts += [
            (-2.0 * ikbt + d * gd * ikbt2).mean(axis=0),
            (-6.0 * d * d * ikbt + d ** 3 * gd * ikbt2).mean(axis=0),
            (-2.0 * xn * ikbt + (xm * xm * gn + 2.0 * xn * xm * gm) * ikbt2).mean(axis=0),
            (-2.0 * xm * ikbt + (2.0 * xn * xm * gn + xn * xn * gm) * ikbt2).mean(axis=0),
        ]
    else:
        parts += [np.zeros(0)] * 4
    return np.concatenate(parts)


def _basis_all(topo: Topology, X: np.ndarray) -> np.ndarray:
    """phi_i(x) for every parameter, (M, N) -> (M, P) in frozen order."""
    return np.concatenate([basis_values_batch(topo, X, k) for k in KIND_ORDER], axis=1)


@dataclass(frozen=True)
class CD1Gradient:
    """Raw CD1 gradient, its SM-converted form, and Monte-Carlo errors.

    sm = factor * raw with factor = -1/(delta kbt^2).
    """

    raw: np.ndarray
    sm: np.ndarray
    se_raw: np.ndarray
    factor: float
    n_units: int

    @property
    def se_sm(self) -> np.ndarray:
        return self.se_raw * abs(self.factor)


def cd1_grad(params: EnergyParams, topo: Topology, batch, kbt: float,
             cfg: CD1Config, noise) -> CD1Gradient:
    """One-step contrastive-divergence gradient estimate.

    For each parameter: mean over data and noise of -phi_i(x) + phi_i(x'),
    where x' = x + force_hat(x) delta + sqrt(2 delta kbt) w. The SM-converted
    gradient divides by -delta kbt^2 (the small-delta equivalence); standard
    errors are over independent noise units (antithetic pairs count as one).
    """
    X = _check_batch(topo, batch)
    if kbt <= 0:
        raise ValidationError("kbt must be positive")
    gen = _as_generator(noise)
    m, n = X.shape
    p = topo.n_params
    drift = X + force_hat(params, topo, X) * cfg.delta
    std = math.sqrt(2.0 * cfg.delta * kbt)
    phi0 = _basis_all(topo, X)  # (M, P)

    n_units = cfg.n_noise // 2 if cfg.antithetic else cfg.n_noise
    # Per data point, accumulate unit sums and squares for the SE.
    s1 = np.zeros((m, p))
    s2 = np.zeros((m, p))
    chunk = max(1, 2_000_000 // max(m * p, 1))
    done = 0
    while done < n_units:
        c = min(chunk, n_units - done)
        w = gen.standard_normal((c, m, n))
        if cfg.antithetic:
            up = _basis_all(topo, (drift + std * w).reshape(-1, n)).reshape(c, m, p)
            dn = _basis_all(topo, (drift - std * w).reshape(-1, n)).reshape(c, m, p)
            y = 0.5 * (up + dn) - phi0
        else:
            y = _basis_all(topo, (drift + std * w).reshape(-1, n)).reshape(c, m, p) - phi0
        s1 += y.sum(axis=0)
        s2 += (y * y).sum(axis=0)
        done += c
    mean_per_point = s1 / n_units
    raw = mean_per_point.mean(axis=0)
    if n_units > 1:
        var_units = (s2 - n_units * mean_per_point ** 2) / (n_units - 1)
        se_raw = np.sqrt(np.maximum(var_units, 0.0).sum(axis=0)) / (m * math.sqrt(n_units))
    else:
        se_raw = np.full(p, np.nan)
    factor = -1.0 / (cfg.delta * kbt ** 2)
    return CD1Gradient(raw=raw, sm=raw * factor, se_raw=se_raw, factor=factor, n_units=n_units)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.lr * grad


class _Adam:
    def __init__(self, lr: float, b1: float, b2: float, eps: float, dim: int):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mh / (np.sqrt(vh) + self.eps)


def _make_optimizer(cfg: TrainConfig, dim: int):
    if cfg.optimizer == "sgd":
        return _Sgd(cfg.learning_rate)
    return _Adam(cfg.learning_rate, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps, dim)


def train_schedule(dataset, topo: Topology, cfg: TrainConfig, rule: str = "force_matching",
                   cd1cfg: Optional[CD1Config] = None, noise: Optional[NoiseSource] = None,
                   log_path=None) -> Schedule:
    """Learn the driving protocol by sweeping the time grid forward.

    `dataset` is a Dataset or a plain (M, N) array. `rule` is
    "force_matching" or "cd1". Each knot is trained on fresh minibatches
    pushed through the exact forward kernel at that knot's time, then the
    next knot warm-starts from the result.
    """
    data = np.asarray(getattr(dataset, "samples", dataset), dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != topo.n_oscillators:
        raise ValidationError(
            f"dataset shape {data.shape} does not match topology N={topo.n_oscillators}")
    if rule not in ("force_matching", "cd1"):
        raise ValidationError(f"unknown rule '{rule}'")
    if rule == "cd1" and cd1cfg is None:
        cd1cfg = CD1Config()
    if noise is None:
        noise = NoiseSource(cfg.seed, STREAM_TRAIN)

    grid = TimeGrid(cfg.tau, cfg.n_times)
    init = EnergyParams.initial(topo, cfg.alpha0, cfg.beta0, cfg.gamma0)
    theta = flatten_params(init)
    slices = flat_slices(topo)
    gslice = slices[ParamKind.GAMMA]
    frozen = [(slices[k], theta[slices[k]].copy())
              for k in KIND_ORDER if k.value in cfg.frozen_kinds]
    m_rows = data.shape[0]

    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    if log_fh:
        log_fh.write(f"# rule={rule} optimizer={cfg.optimizer} lr={cfg.learning_rate!r} "
                     f"batch={cfg.batch_size} seed={cfg.seed}\n")
        if rule == "cd1":
            log_fh.write(f"# delta={cd1cfg.delta!r} n_noise={cd1cfg.n_noise} "
                         f"antithetic={cd1cfg.antithetic}\n")
        log_fh.write("snapshot,step,loss,grad_norm,wall_time\n")
    t_start = time.monotonic()

    snapshots = []
    try:
        for l, t_l in enumerate(grid.times()):
            gen = noise.child(l).generator()
            opt = _make_optimizer(cfg, theta.size)
            params = unflatten_params(theta, topo)
            for step in range(cfg.steps_per_time):
                rows = gen.integers(0, m_rows, size=cfg.batch_size)
                x_t = forward_kernel_sample(data[rows], float(t_l), cfg.kbt, gen)
                if rule == "force_matching":
                    grad = force_matching_grad(params, topo, x_t, cfg.kbt)
                else:
                    grad = cd1_grad(params, topo, x_t, cfg.kbt, cd1cfg, gen).sm
                if not np.all(np.isfinite(grad)):
                    raise TrainingDivergedError(l, step)
                theta = opt.step(theta, grad)
                np.maximum(theta[gslice], cfg.gamma_min, out=theta[gslice])
                for sl, vals in frozen:
                    theta[sl] = vals
                if not np.all(np.isfinite(theta)):
                    raise TrainingDivergedError(l, step)
                params = unflatten_params(theta, topo)
                if log_fh and (step % cfg.log_every == 0 or step == cfg.steps_per_time - 1):
                    loss = sm_loss(params, topo, x_t, cfg.kbt)
                    if not math.isfinite(loss):
                        raise TrainingDivergedError(l, step)
                    log_fh.write(f"{l},{step},{loss!r},{np.linalg.norm(grad)!r},"
                                 f"{time.monotonic() - t_start:.3f}\n")
            snapshots.append(params)
    finally:
        if log_fh:
            log_fh.close()
    return Schedule(grid, topo, snapshots, kbt=cfg.kbt)
