import sys
from pathlib import Path

import numpy as np
import pytest

# Let tests import the synthetic digit generator without installing scripts/.
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

from oscsgm.model import EnergyParams, Topology


@pytest.fixture
def pair_topology():
    """Two oscillators joined by a single edge."""
    return Topology.complete(2)


@pytest.fixture
def single_site():
    return Topology.uncoupled(1)


def random_topology(rng, n_max=5):
    n = int(rng.integers(1, n_max + 1))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    if pairs:
        keep = rng.random(len(pairs)) < 0.6
        edges = tuple(p for p, k in zip(pairs, keep) if k)
    else:
        edges = ()
    return Topology(n, edges)


def random_params(rng, topo, scale=1.0):
    n, e = topo.n_oscillators, topo.n_edges
    return EnergyParams(
        alpha=rng.uniform(-scale, scale, n),
        beta=rng.uniform(-scale, scale, n),
        gamma=rng.uniform(0.5, 2.0, n),
        f_ext=rng.uniform(-scale, scale, n),
        kappa=rng.uniform(-scale, scale, e),
        lambda_=rng.uniform(-scale, scale, e),
        chi=rng.uniform(-scale, scale, e),
        chi_hat=rng.uniform(-scale, scale, e),
    )
