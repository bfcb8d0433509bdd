"""Stochastic dynamics: exact forward noising, reverse-SDE sampling, and the
static Langevin baseline.

The forward process is the Ornstein-Uhlenbeck SDE dx = -x dt + sqrt(2 kbt) dw,
whose transition kernel is known in closed form; training data at time t is
drawn from the kernel directly, never by simulation. Generation integrates the
reverse-time SDE with Euler-Maruyama under the time-reversed protocol, using
the inference force 2*force_hat(x) + x. The equilibrium baseline integrates
plain Langevin dynamics under force_hat at fixed parameters.

Every chain owns a child noise stream keyed by its chain index, so results do
not depend on how chains are chunked or scheduled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IntegrationBlowupError, ValidationError
from .model import EnergyParams, Topology, force_hat, total_inference_force
from .rng import NoiseSource

BLOWUP_THRESHOLD = 1.0e3
# Chains are processed in chunks sized so a chunk's pregenerated noise block
# stays around 32 MB regardless of N and step count.
_NOISE_FLOATS_PER_CHUNK = 4_000_000


@dataclass(frozen=True)
class IntegratorConfig:
    """Euler-Maruyama step size and temperature."""

    dt: float
    kbt: float
    blowup: float = BLOWUP_THRESHOLD

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not (self.kbt > 0 and math.isfinite(self.kbt)):
            raise ValidationError(f"kbt must be positive, got {self.kbt}")
        if self.blowup <= 0:
            raise ValidationError("blowup threshold must be positive")


def _as_generator(noise) -> np.random.Generator:
    if isinstance(noise, np.random.Generator):
        return noise
    return noise.generator()


def forward_kernel_sample(x0, t: float, kbt: float, noise) -> np.ndarray:
    """Draw x_t from the exact OU transition kernel started at x0.

    x_t = x0 * e^(-t) + eps,  eps ~ N(0, kbt (1 - e^(-2t)) 1).
    Accepts a single state or a batch; the draw matches x0's shape.
    `noise` is a NoiseSource or an already-open Generator.
    """
    if t < 0:
        raise ValidationError(f"kernel time must be nonnegative, got {t}")
    if kbt <= 0:
        raise ValidationError(f"kbt must be positive, got {kbt}")
    x0 = np.asarray(x0, dtype=np.float64)
    if t == 0:
        return x0.copy()
    gen = _as_generator(noise)
    std = math.sqrt(kbt * -math.expm1(-2.0 * t))
    return x0 * math.exp(-t) + std * gen.standard_normal(x0.shape)


def _check_blowup(x: np.ndarray, step: int, threshold: float, chain_offset: int) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > threshold)
    if bad.any():
        chain = int(np.nonzero(bad.any(axis=-1))[0][0]) + chain_offset
        raise IntegrationBlowupError(chain, step, threshold)


def _chain_chunks(n_chains: int, n_steps: int, n_osc: int) -> int:
    per_chain = (n_steps + 1) * n_osc
    return max(1, _NOISE_FLOATS_PER_CHUNK // max(per_chain, 1))


def reverse_sample(schedule, cfg: IntegratorConfig, noise: NoiseSource, n_chains: int) -> np.ndarray:
    """Generate n_chains samples by integrating the reverse-time SDE.

    Each chain starts from an exact draw x ~ N(0, kbt 1) and is stepped
    x <- x + (2 force_hat + x) dt + sqrt(2 kbt dt) w for reverse time 0..tau,
    with parameters interpolated at forward time tau - s. Returns the final
    states as an (n_chains, N) array.
    """
    if n_chains < 1:
        raise ValidationError(f"n_chains must be at least 1, got {n_chains}")
    topo = schedule.topology
    grid = schedule.grid
    tau = grid.tau
    n_steps = int(round(tau / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - tau) > 1e-9 * tau:
        raise ValidationError(f"dt={cfg.dt} does not divide tau={tau}")
    min_gap = float(np.min(np.diff(grid.times())))
    if cfg.dt > min_gap * (1 + 1e-12):
        raise ValidationError(f"dt={cfg.dt} is coarser than the protocol grid ({min_gap})")

    n = topo.n_oscillators
    # Parameters for the step leaving reverse time s_k = k*dt, shared by all chains.
    step_params = [schedule.params_at(tau - k * cfg.dt) for k in range(n_steps)]
    step_std = math.sqrt(2.0 * cfg.kbt * cfg.dt)
    init_std = math.sqrt(cfg.kbt)

    out = np.empty((n_chains, n))
    chunk = _chain_chunks(n_chains, n_steps, n)
    for lo in range(0, n_chains, chunk):
        hi = min(lo + chunk, n_chains)
        block = np.stack([
            noise.child(c).generator().standard_normal((n_steps + 1, n))
            for c in range(lo, hi)
        ])  # (chains, 1 + steps, N); row 0 is the initial draw
        x = init_std * block[:, 0, :]
        for k in range(n_steps):
            p = step_params[k]
            x = x + total_inference_force(p, topo, x) * cfg.dt + step_std * block[:, k + 1, :]
            _check_blowup(x, k, cfg.blowup, lo)
        out[lo:hi] = x
    return out


def equilibrium_sample(params: EnergyParams, topo: Topology, cfg: IntegratorConfig,
                       total_time: float, noise: NoiseSource,
                       x0=None, stride_time: float = 4.0) -> np.ndarray:
    """Langevin trajectory under the static force -grad E_hat, subsampled.

    dx = force_hat(x) dt + sqrt(2 kbt) dw, integrated for total_time; one
    state is recorded every stride_time of physical time. With
    total_time = tau * S and stride_time = tau this yields S samples, the
    matched-budget baseline for the reverse-SDE sampler.

    x0 may be a single state (N,) or a batch (B, N); default zeros. Returns
    (n_recorded, N) or (n_recorded, B, N).
    """
    if total_time <= 0:
        raise ValidationError(f"total_time must be positive, got {total_time}")
    if stride_time <= 0:
        raise ValidationError(f"stride_time must be positive, got {stride_time}")
    n = topo.n_oscillators
    if x0 is None:
        x0 = np.zeros(n)
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    X = x0.reshape(1, n) if single else x0.copy()
    n_chains = X.shape[0]

    n_steps = int(round(total_time / cfg.dt))
    stride = max(1, int(round(stride_time / cfg.dt)))
    n_rec = n_steps // stride
    step_std = math.sqrt(2.0 * cfg.kbt * cfg.dt)

    gens = [noise.child(c).generator() for c in range(n_chains)]
    rec = np.empty((n_rec, n_chains, n))
    r = 0
    # Noise is pregenerated in step blocks to keep per-step cost vectorized.
    block_steps = max(1, _NOISE_FLOATS_PER_CHUNK // max(n_chains * n, 1))
    k = 0
    while k < n_steps:
        m = min(block_steps, n_steps - k)
        block = np.stack([g.standard_normal((m, n)) for g in gens], axis=1)  # (m, chains, N)
        for j in range(m):
            X = X + force_hat(params, topo, X) * cfg.dt + step_std * block[j]
            _check_blowup(X, k + j, cfg.blowup, 0)
            if (k + j + 1) % stride == 0 and r < n_rec:
                rec[r] = X
                r += 1
        k += m
    return rec[:, 0, :] if single else rec


def relax_to_equilibrium(schedule, cfg: IntegratorConfig, relax_time: float,
                         noise: NoiseSource, n_chains: int = 1) -> np.ndarray:
    """Physical initialization for the reverse sampler: Langevin relaxation
    from x = 0 under the inference force at theta(tau).

    Returns (N,) for a single chain, else (n_chains, N).
    """
    if relax_time < 0:
        raise ValidationError(f"relax_time must be nonnegative, got {relax_time}")
    topo = schedule.topology
    p_tau = schedule.params_at(schedule.grid.tau)
    n = topo.n_oscillators
    n_steps = int(round(relax_time / cfg.dt))
    step_std = math.sqrt(2.0 * cfg.kbt * cfg.dt)

    out = np.empty((n_chains, n))
    chunk = _chain_chunks(n_chains, n_steps, n)
    for lo in range(0, n_chains, chunk):
        hi = min(lo + chunk, n_chains)
        if n_steps:
            block = np.stack([
                noise.child(c).generator().standard_normal((n_steps, n))
                for c in range(lo, hi)
            ])
        x = np.zeros((hi - lo, n))
        for k in range(n_steps):
            x = x + total_inference_force(p_tau, topo, x) * cfg.dt + step_std * block[:, k, :]
            _check_blowup(x, k, cfg.blowup, lo)
        out[lo:hi] = x
    return out[0] if n_chains == 1 else out


def save_samples(path, samples: np.ndarray, metadata: Optional[dict] = None) -> None:
    """Write samples as CSV (header x0..x{N-1}) plus a JSON metadata sidecar."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(samples.shape[1])])
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
    if metadata is not None:
        sidecar = path.with_name(path.name + ".meta.json")
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_samples(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"empty sample file {path}")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"bad sample file {path}: {exc}") from None
    return data
