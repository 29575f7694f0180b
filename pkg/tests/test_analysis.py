"""Diagnostics, smoothed loss, KDE, iterate averaging, and OU formulas."""

import numpy as np
import pytest

from quorumsim import analysis as an
from quorumsim.bounds import BoundInputs
from quorumsim.objectives import DoubleWell, Quadratic, double_well_grad
from quorumsim.stochastic import AdditiveUniform, NoNoise, StreamKey


class TestSyncMeasure:
    def test_identical_rows_give_zero(self):
        assert an.sync_measure(np.full((5, 3), 2.0)) == 0.0

    def test_hand_value(self):
        assert an.sync_measure(np.array([[0.0], [2.0]])) == pytest.approx(2.0)

    def test_pairwise_identity(self):
        # sum_{i<j} |x_i - x_j|^2 = p * sum_i |x_i - com|^2
        rng = np.random.default_rng(0)
        for _ in range(100):
            p, n = int(rng.integers(2, 12)), int(rng.integers(1, 5))
            X = rng.standard_normal((p, n))
            pairwise = sum(
                np.sum((X[i] - X[j]) ** 2) for i in range(p) for j in range(i + 1, p)
            )
            assert abs(pairwise - p * an.sync_measure(X)) <= 1e-12 * max(1.0, pairwise)


class TestEpsilonDistortion:
    def test_zero_when_agents_agree(self):
        obj = DoubleWell(150.0)
        eps = an.epsilon_distortion(obj, np.full((4, 1), 0.3))
        assert np.allclose(eps, 0.0, atol=1e-15)

    def test_zero_on_quadratics(self):
        obj = Quadratic(np.array([[2.0, 0.3], [0.3, 1.0]]))
        rng = np.random.default_rng(1)
        for _ in range(20):
            X = rng.uniform(-5, 5, (7, 2))
            assert np.allclose(an.epsilon_distortion(obj, X), 0.0, atol=1e-13)

    def test_double_well_hand_value(self):
        obj = DoubleWell(150.0)
        X = np.array([[-1.0], [1.0]])
        expected = double_well_grad(0.0, 150.0) - 0.5 * (
            double_well_grad(-1.0, 150.0) + double_well_grad(1.0, 150.0)
        )
        assert an.epsilon_distortion(obj, X)[0] == pytest.approx(expected, rel=1e-12)

    def test_generically_nonzero_on_double_well(self):
        obj = DoubleWell(150.0)
        X = np.array([[-0.5], [0.7], [1.3]])
        assert np.linalg.norm(an.epsilon_distortion(obj, X)) > 1e-6


class TestSmoothedLoss:
    def test_zero_noise_returns_exact_value(self):
        obj = DoubleWell(150.0)
        est, se = an.smoothed_loss(obj, NoNoise(), 0.15, np.array([0.7]),
                                   n_samples=10, key=StreamKey(1))
        assert est == pytest.approx(obj.value(np.array([0.7])), rel=1e-15)
        assert se <= 1e-18

    def test_uniform_smoothing_of_square(self):
        # E[(x - eta u)^2] = x^2 + eta^2 a^2 / 3 for u ~ U(-a, a)
        obj = Quadratic(np.array([[2.0]]))  # value = x^2
        eta, a, x = 0.2, 1.5, 0.8
        est, se = an.smoothed_loss(obj, AdditiveUniform(a), eta, np.array([x]),
                                   n_samples=200_000, key=StreamKey(3))
        target = x**2 + eta**2 * a**2 / 3.0
        assert abs(est - target) <= 3.0 * se

    def test_standard_error_shrinks_as_root_n(self):
        obj = DoubleWell(150.0)
        noise = AdditiveUniform(1.5)
        sizes = [100, 1000, 10000]
        spreads = []
        for n in sizes:
            reps = [
                an.smoothed_loss(obj, noise, 0.15, np.array([0.5]), n,
                                 key=StreamKey(50 + r, step=n))[0]
                for r in range(60)
            ]
            spreads.append(np.std(reps, ddof=1))
        slope = np.polyfit(np.log(sizes), np.log(spreads), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)

    def test_grid_helper_matches_pointwise_shape(self):
        obj = DoubleWell(150.0)
        grid = np.linspace(-1, 1, 11)
        curve = an.smoothed_loss_grid(obj, AdditiveUniform(1.5), 0.15, grid,
                                      n_samples=500, seed=9)
        assert curve.shape == grid.shape


class TestKde:
    def test_standard_normal_recovery(self):
        rng = np.random.default_rng(2)
        samples = rng.standard_normal(100_000)
        est = an.kde(samples)
        xs = np.linspace(-3, 3, 241)
        pdf = np.exp(-0.5 * xs**2) / np.sqrt(2 * np.pi)
        assert np.max(np.abs(an.kde_evaluate(est, xs) - pdf)) <= 0.02

    def test_integral_close_to_one(self):
        rng = np.random.default_rng(3)
        est = an.kde(rng.uniform(-2, 2, 5000))
        integral = np.trapezoid(est.density, est.grid)
        assert integral == pytest.approx(1.0, abs=0.01)

    def test_density_nonnegative(self):
        rng = np.random.default_rng(4)
        est = an.kde(rng.standard_normal(500))
        assert np.all(est.density >= 0.0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        samples = rng.standard_normal(300)
        a = an.kde(samples)
        b = an.kde(samples[::-1])
        assert np.array_equal(a.grid, b.grid)
        assert np.allclose(a.density, b.density, atol=1e-12)

    def test_zero_variance_returns_spike_flag(self):
        est = an.kde(np.full(10, 1.5))
        assert est.spike
        assert est.spike_location == pytest.approx(1.5)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            an.kde(np.array([1.0]))

    def test_silverman_default(self):
        rng = np.random.default_rng(6)
        samples = rng.standard_normal(1000)
        est = an.kde(samples)
        assert est.bandwidth == pytest.approx(
            1.06 * samples.std(ddof=1) * 1000 ** (-0.2)
        )


class TestIterateAverage:
    def test_constant_trajectory(self):
        z = an.iterate_average(np.full((9, 2), 3.0))
        assert np.allclose(z, 3.0)

    def test_hand_value(self):
        assert np.allclose(an.iterate_average(np.array([0.0, 2.0])), [0.0, 1.0])

    def test_linear_trajectory_half_slope(self):
        t = np.arange(1, 20001, dtype=float)
        z = an.iterate_average(t)
        # mean of 1..T is (T+1)/2
        assert z[-1] == pytest.approx(0.5 * (t[-1] + 1.0), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            an.iterate_average(np.empty((0, 2)))


class TestOuStationaryVariance:
    def test_scalar_case(self):
        V = an.ou_stationary_variance(np.array([[1.0]]), np.array([[1.0]]), p=1)
        assert V[0, 0] == pytest.approx(0.5)
        V = an.ou_stationary_variance(np.array([[1.0]]), np.array([[1.0]]), p=4)
        assert V[0, 0] == pytest.approx(0.125)

    def test_diagonal_closed_form(self):
        A = np.diag([1.0, 3.0])
        Sigma = np.array([[2.0, 0.4], [0.4, 5.0]])
        V = an.ou_stationary_variance(A, Sigma, p=2)
        a = np.array([1.0, 3.0])
        expected = Sigma / (a[:, None] + a[None, :]) / 2
        assert np.allclose(V, expected, atol=1e-12)

    def test_residual_on_random_spd(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(1, 8))
            M = rng.standard_normal((n, n))
            A = M @ M.T + n * np.eye(n)
            S = rng.standard_normal((n, n))
            Sigma = S @ S.T
            V = an.ou_stationary_variance(A, Sigma, p=3)
            residual = A @ V + V @ A.T - Sigma / 3
            assert np.linalg.norm(residual) <= 1e-10 * max(1.0, np.linalg.norm(Sigma))

    def test_rejects_unstable_drift(self):
        with pytest.raises(ValueError):
            an.ou_stationary_variance(np.array([[-1.0]]), np.array([[1.0]]))


class TestOuAsymptoticAvgVariance:
    def test_scalar_matches_fisher_floor(self):
        # scalar: sigma^2 / (p h^2)
        out = an.ou_asymptotic_avg_variance(np.array([[2.0]]), np.array([[4.0]]), p=2)
        assert out[0, 0] == pytest.approx(0.5)
        out = an.ou_asymptotic_avg_variance(np.array([[1.0]]), np.array([[1.0]]), p=1)
        assert out[0, 0] == pytest.approx(1.0)

    def test_preconditioning_invariance(self):
        rng = np.random.default_rng(8)
        n = 3
        M = rng.standard_normal((n, n))
        A = M @ M.T + n * np.eye(n)
        S = rng.standard_normal((n, n))
        Sigma = S @ S.T
        base = an.ou_asymptotic_avg_variance(A, Sigma, p=2)
        for _ in range(50):
            U, _ = np.linalg.qr(rng.standard_normal((n, n)))
            V, _ = np.linalg.qr(rng.standard_normal((n, n)))
            Q = U @ np.diag(rng.uniform(0.5, 2.0, n)) @ V
            out = an.ou_asymptotic_avg_variance(Q @ A, Q @ Sigma @ Q.T, p=2)
            assert np.max(np.abs(out - base)) <= 1e-12 * max(1.0, np.max(np.abs(base)))

    def test_singular_drift_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            an.ou_asymptotic_avg_variance(np.zeros((2, 2)), np.eye(2))


class TestAuxiliaryYSequence:
    def _qsgd_run(self, p=6, k=1.0, steps=40, seed=99):
        from quorumsim.config import SimulationConfig
        from quorumsim.dynamics import AlgorithmKind
        from quorumsim.harness import run_simulation

        cfg = SimulationConfig(
            objective_kind="double_well", f_const=150.0,
            algorithm=AlgorithmKind.QSGD, k=k,
            noise_kind="uniform", half_width=1.5,
            agents=p, iterations=steps, eta=0.15,
            master_seed=seed, runs=1, record_full=True, record_stride=10,
            ema_quorum=False,
        ).validate()
        return run_simulation(cfg, 0), cfg

    def test_recorded_run_residuals_vanish(self):
        record, cfg = self._qsgd_run()
        obj = cfg.build_objective()
        res = an.auxiliary_y_sequence(
            record.com_trajectory, record.noise_trajectory, record.eps_trajectory,
            obj, eta=0.15, b=1.0, p=6,
        )
        assert np.max(res) <= 1e-10

    def test_single_agent_reduces_to_plain_identity(self):
        record, cfg = self._qsgd_run(p=1, k=0.0)
        obj = cfg.build_objective()
        assert np.allclose(record.eps_trajectory, 0.0, atol=1e-15)
        res = an.auxiliary_y_sequence(
            record.com_trajectory, record.noise_trajectory, record.eps_trajectory,
            obj, eta=0.15, b=1.0, p=1,
        )
        assert np.max(res) <= 1e-10

    def test_detects_corrupted_noise_record(self):
        record, cfg = self._qsgd_run()
        obj = cfg.build_objective()
        noise = record.noise_trajectory.copy()
        noise[17] += 0.5
        res = an.auxiliary_y_sequence(
            record.com_trajectory, noise, record.eps_trajectory, obj,
            eta=0.15, b=1.0, p=6,
        )
        assert res[17] > 1e-3
        assert np.max(np.delete(res, 17)) <= 1e-10

    def test_misaligned_lengths_rejected(self):
        with pytest.raises(ValueError):
            an.auxiliary_y_sequence(
                np.zeros((5, 1)), np.zeros((3, 1)), np.zeros((4, 1)),
                DoubleWell(150.0), eta=0.1,
            )


class TestBoundReport:
    def _diag(self, sync, eps):
        n = len(sync)
        return an.TrajectoryDiagnostics(
            steps=np.arange(n), sync_measure=np.asarray(sync, dtype=float),
            eps_norm=np.asarray(eps, dtype=float),
            loss_quorum=np.zeros(n), loss_mean_agents=np.zeros(n),
        )

    def test_synchronized_noise_free_ensemble_passes(self):
        diag = self._diag(np.zeros(10), np.zeros(10))
        inputs = BoundInputs(p=4, n=1, b=1, eta=0.1, C=1.0, Q=1.0, k=3.0,
                             lambda_bar=1.0, lambda_strong=1.0)
        report = an.bound_report([diag], inputs)
        by_name = {r["quantity"]: r for r in report}
        assert by_name["sync_measure"]["pass"]
        assert by_name["eps_norm"]["pass"]

    def test_gain_below_threshold_marks_not_applicable(self):
        diag = self._diag(np.ones(10), np.ones(10))
        inputs = BoundInputs(p=4, n=1, b=1, eta=0.1, C=1.0, Q=1.0, k=0.5,
                             lambda_bar=1.0, lambda_strong=1.0)
        report = an.bound_report([diag], inputs)
        for row in report:
            assert row["pass"] is None
            assert "not applicable" in row["status"]

    def test_failure_reported_with_margin(self):
        diag = self._diag(np.full(10, 100.0), np.zeros(10))
        inputs = BoundInputs(p=4, n=1, b=1, eta=0.1, C=1.0, Q=0.0, k=3.0,
                             lambda_bar=1.0, lambda_strong=1.0)
        report = an.bound_report([diag], inputs)
        sync_row = next(r for r in report if r["quantity"] == "sync_measure")
        assert sync_row["status"] == "fail"
        assert sync_row["margin"] < 0

    def test_com_distance_included_when_supplied(self):
        diag = self._diag(np.zeros(4), np.zeros(4))
        inputs = BoundInputs(p=2, n=1, b=1, eta=0.1, C=1.0, Q=1.0, k=1.0,
                             lambda_bar=-1.0, lambda_strong=1.0)
        report = an.bound_report([diag], inputs, com_distances=[0.01, 0.02])
        names = [r["quantity"] for r in report]
        assert "com_distance" in names

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            an.bound_report([], BoundInputs())

    def test_burn_in_respected(self):
        sync = np.concatenate([np.full(8, 50.0), np.zeros(2)])
        diag = self._diag(sync, np.zeros(10))
        inputs = BoundInputs(p=4, n=1, b=1, eta=0.1, C=1.0, Q=1.0, k=3.0,
                             lambda_bar=1.0, lambda_strong=1.0)
        strict = an.bound_report([diag], inputs, burn_in=0.8)
        sync_row = next(r for r in strict if r["quantity"] == "sync_measure")
        assert sync_row["empirical"] == pytest.approx(0.0)


class TestTrajectoryDiagnostics:
    def test_length_consistency_enforced(self):
        with pytest.raises(ValueError):
            an.TrajectoryDiagnostics(
                steps=np.arange(3), sync_measure=np.zeros(3), eps_norm=np.zeros(2),
                loss_quorum=np.zeros(3), loss_mean_agents=np.zeros(3),
            )


class TestLossCrossSection:
    def test_slice_holds_remaining_coordinates_fixed(self):
        from quorumsim.objectives import NdLoss, nd_loss_value

        obj = NdLoss(5, 50.0)
        gx = np.linspace(-1, 1, 4)
        gy = np.linspace(-2, 0, 3)
        Z = an.loss_cross_section(obj, gx, gy, fill=-1.2)
        assert Z.shape == (3, 4)
        point = np.array([gx[1], gy[2], -1.2, -1.2, -1.2])
        assert Z[2, 1] == pytest.approx(float(nd_loss_value(point, 50.0)))

    def test_needs_two_dimensions(self):
        with pytest.raises(ValueError):
            an.loss_cross_section(DoubleWell(150.0), [0.0], [0.0])
