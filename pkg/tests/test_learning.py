"""Learning rules: gradient oracles, the training loop, and its guardrails."""

import numpy as np
import pytest

from conftest import random_params, random_topology
from oscsgm.errors import TrainingDivergedError, ValidationError
from oscsgm.learning import (
    CD1Config,
    TrainConfig,
    cd1_grad,
    force_matching_grad,
    sm_loss,
    train_schedule,
)
from oscsgm.model import (
    EnergyParams,
    Topology,
    flatten_params,
    unflatten_params,
)
from oscsgm.rng import STREAM_TRAIN, NoiseSource

KBT = 0.005


class TestForceMatchingGradient:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences_of_the_loss(self, seed):
        rng = np.random.default_rng(seed)
        topo = random_topology(rng, n_max=4)
        p = random_params(rng, topo)
        X = rng.uniform(-1, 1, (16, topo.n_oscillators))
        g = force_matching_grad(p, topo, X, KBT)
        theta = flatten_params(p)
        h = 1e-6
        for i in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd = (sm_loss(unflatten_params(up, topo), topo, X, KBT)
                  - sm_loss(unflatten_params(dn, topo), topo, X, KBT)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=2e-4, abs=1e-4)

    def test_single_point_quartic_component(self):
        # one state x=0.5 with grad E_hat = -0.1 everywhere relevant:
        # the quartic entry is -3 x^2 / kbt + x^3 (grad E) / kbt^2 = -650
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1e-12], f_ext=[-0.1])
        g = force_matching_grad(p, topo, np.array([[0.5]]), KBT)
        assert g[1] == pytest.approx(-650.0, rel=1e-6)

    def test_pure_quadratic_loss_closed_form(self):
        # J(alpha) = -alpha/kbt + mean(x^2) alpha^2 / (2 kbt^2) for a single site
        topo = Topology.uncoupled(1)
        X = np.array([[0.3], [-0.5], [0.1]])
        for a in (0.4, 1.0, -0.7):
            p = EnergyParams(alpha=[a], beta=[0.0], gamma=[1e-300], f_ext=[0.0])
            want = -a / KBT + (X ** 2).mean() * a ** 2 / (2 * KBT ** 2)
            assert sm_loss(p, topo, X, KBT) == pytest.approx(want, rel=1e-10)

    def test_batch_shape_validation(self):
        topo = Topology.uncoupled(2)
        p = EnergyParams.initial(topo)
        with pytest.raises(ValidationError):
            force_matching_grad(p, topo, np.zeros((4, 3)), KBT)


class TestContrastiveDivergence:
    def test_antithetic_noise_cancels_linear_basis_exactly(self):
        # with zero force the proposal is x + noise; the external-force basis
        # is linear, so paired +/- noise cancels to machine zero
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1e-300], f_ext=[0.0])
        X = np.array([[0.2]])
        cfg = CD1Config(delta=1e-3, n_noise=64, antithetic=True)
        out = cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(0))
        assert out.raw[3] == pytest.approx(0.0, abs=1e-15)

    def test_zero_force_proposal_moments_are_exact(self):
        # with zero force from x=0 the proposal is pure noise of variance
        # 2 delta kbt, so each basis mean has a closed form: s/2 for the
        # quadratic, 3s^2/4 for the quartic, 15s^3/6 for the sextic, 0 for
        # the linear term (s = 2 delta kbt)
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1e-300], f_ext=[0.0])
        X = np.array([[0.0]])
        cfg = CD1Config(delta=1e-4, n_noise=4096, antithetic=False)
        out = cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(1))
        s = 2 * cfg.delta * KBT
        want = np.array([s / 2, 3 * s ** 2 / 4, 15 * s ** 3 / 6, 0.0])
        z = (out.raw - want) / np.maximum(out.se_raw, 1e-300)
        assert np.all(np.abs(z) < 5)

    def test_converted_gradient_approaches_force_matching(self):
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.5], beta=[0.3], gamma=[0.8], f_ext=[-0.1])
        X = np.array([[0.4]])
        fm = force_matching_grad(p, topo, X, KBT)
        cfg = CD1Config(delta=1e-4, n_noise=200_000, antithetic=True)
        out = cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(2))
        # bias is O(delta / kbt^2) ~ 4 per unit coefficient here; stay coarse
        assert np.allclose(out.sm, fm, rtol=0.02, atol=25.0)

    def test_bias_shrinks_with_delta(self):
        # antithetic pairing pins the Monte Carlo floor well below the
        # O(delta) bias for this delta ladder, so the error must fall
        import warnings
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.5], beta=[0.3], gamma=[0.8], f_ext=[-0.1])
        X = np.array([[0.4]])
        fm = force_matching_grad(p, topo, X, KBT)
        errs = []
        for delta in (3e-2, 1e-2, 3e-3):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cfg = CD1Config(delta=delta, n_noise=2_000_000, antithetic=True)
            out = cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(3))
            errs.append(np.linalg.norm(out.sm - fm))
        assert errs[0] > errs[1] > errs[2]

    def test_standard_error_is_honest(self):
        # repeat the estimator with independent noise; the spread of the
        # estimates should match the reported standard error
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.5], beta=[0.0], gamma=[1e-6], f_ext=[0.0])
        X = np.array([[0.3]])
        cfg = CD1Config(delta=1e-3, n_noise=2048, antithetic=False)
        reps = np.array([cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(k)).raw[0]
                         for k in range(40)])
        claimed = cd1_grad(p, topo, X, KBT, cfg, np.random.default_rng(99)).se_raw[0]
        assert reps.std() == pytest.approx(claimed, rel=0.5)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            CD1Config(delta=0.0)
        with pytest.raises(ValidationError):
            CD1Config(n_noise=0)
        with pytest.raises(ValidationError):
            CD1Config(n_noise=7, antithetic=True)


def gaussian_dataset(n=512, std=0.3, seed=0):
    return np.random.default_rng(seed).normal(0.0, std, (n, 1))


class TestTrainingLoop:
    def test_zero_steps_returns_the_initial_landscape(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=3, steps_per_time=0, batch_size=8, seed=1)
        sched = train_schedule(gaussian_dataset(), topo, cfg)
        init = EnergyParams.initial(topo)
        assert all(s == init for s in sched.snapshots)
        assert sched.kbt == cfg.kbt

    def test_training_is_deterministic(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=30, batch_size=16, seed=7)
        a = train_schedule(gaussian_dataset(), topo, cfg)
        b = train_schedule(gaussian_dataset(), topo, cfg)
        assert np.array_equal(a.flat, b.flat)

    def test_gamma_floor_is_enforced_everywhere(self):
        topo = Topology.uncoupled(2)
        cfg = TrainConfig(n_times=3, steps_per_time=60, batch_size=32,
                          learning_rate=5e-2, gamma_min=0.002, seed=2)
        sched = train_schedule(np.random.default_rng(0).normal(0, 0.2, (256, 2)), topo, cfg)
        for s in sched.snapshots:
            assert np.all(s.gamma >= 0.002)

    def test_frozen_kinds_never_move(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=40, batch_size=16,
                          frozen_kinds=("beta", "gamma"), seed=3)
        sched = train_schedule(gaussian_dataset(), topo, cfg)
        for s in sched.snapshots:
            assert s.beta[0] == cfg.beta0
            assert s.gamma[0] == cfg.gamma0
            assert s.alpha[0] != cfg.alpha0  # the rest did train

    def test_divergence_is_reported_with_location(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=50, batch_size=4,
                          learning_rate=1e8, optimizer="sgd", seed=4)
        with np.errstate(over="ignore"), pytest.raises(TrainingDivergedError) as exc:
            train_schedule(gaussian_dataset(), topo, cfg)
        assert exc.value.snapshot >= 0

    def test_cd1_rule_runs(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=5, batch_size=8, seed=5)
        sched = train_schedule(gaussian_dataset(64), topo, cfg, rule="cd1",
                               cd1cfg=CD1Config(delta=1e-3, n_noise=16))
        assert len(sched.snapshots) == 2

    def test_unknown_rule_rejected(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=1, batch_size=8)
        with pytest.raises(ValidationError):
            train_schedule(gaussian_dataset(64), topo, cfg, rule="hebbian")

    def test_sgd_optimizer_runs(self):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=20, batch_size=16,
                          optimizer="sgd", learning_rate=1e-5, seed=6)
        sched = train_schedule(gaussian_dataset(), topo, cfg)
        assert len(sched.snapshots) == 2

    def test_log_file_records_provenance_and_steps(self, tmp_path):
        topo = Topology.uncoupled(1)
        cfg = TrainConfig(n_times=2, steps_per_time=20, batch_size=16,
                          log_every=10, seed=8)
        log = tmp_path / "train.log.csv"
        train_schedule(gaussian_dataset(), topo, cfg, log_path=log)
        text = log.read_text()
        head = [ln for ln in text.splitlines() if ln.startswith("#")]
        assert any("force_matching" in ln for ln in head)
        assert any("seed" in ln for ln in head)
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        assert rows[0].split(",")[:3] == ["snapshot", "step", "loss"]
        snaps = {int(r.split(",")[0]) for r in rows[1:]}
        assert snaps == {0, 1}

    def test_learned_stiffness_matches_a_gaussian_source(self):
        # data N(0, s^2): the time-zero landscape should fit alpha ~ kbt/s^2
        # when the quartic and sextic terms are pinned at zero weight
        topo = Topology.uncoupled(1)
        s2 = 0.04
        data = np.random.default_rng(11).normal(0, np.sqrt(s2), (4096, 1))
        cfg = TrainConfig(n_times=2, steps_per_time=800, batch_size=256,
                          learning_rate=5e-3, beta0=0.0, gamma0=0.001,
                          frozen_kinds=("beta", "gamma"), seed=12)
        sched = train_schedule(data, topo, cfg)
        alpha_hat = sched.snapshots[0].alpha[0]
        want = KBT / data.var()
        assert alpha_hat == pytest.approx(want, rel=0.1)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValidationError):
            TrainConfig(optimizer="lbfgs")
        with pytest.raises(ValidationError):
            TrainConfig(n_times=1)
        with pytest.raises(ValidationError):
            TrainConfig(gamma0=0.0005, gamma_min=0.001)
        with pytest.raises(ValidationError):
            TrainConfig(frozen_kinds=("mass",))
