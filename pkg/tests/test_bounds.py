"""Closed-form bounds: hand values, preconditions, monotonicity, reductions."""

import math

import numpy as np
import pytest

from quorumsim import bounds as bd


def inputs(**kw):
    defaults = dict(p=4, n=1, b=1.0, eta=0.1, C=1.0, Q=1.0, k=2.0,
                    lambda_bar=1.0, lambda_strong=1.0)
    defaults.update(kw)
    return bd.BoundInputs(**defaults)


class TestBoundInputs:
    def test_validation(self):
        with pytest.raises(bd.BoundDomainError):
            bd.BoundInputs(p=0)
        with pytest.raises(bd.BoundDomainError):
            bd.BoundInputs(b=0.5)
        with pytest.raises(bd.BoundDomainError):
            bd.BoundInputs(eta=-0.1)


class TestSyncBound:
    def test_single_agent_is_zero(self):
        assert bd.sync_bound(inputs(p=1)) == 0.0

    def test_hand_value(self):
        assert bd.sync_bound(inputs(p=4, C=1.0, eta=0.1, b=1.0, k=2.0, lambda_bar=1.0)) \
            == pytest.approx(0.15)

    def test_doubling_gap_halves_bound(self):
        lo = bd.sync_bound(inputs(k=2.0, lambda_bar=1.0))
        hi = bd.sync_bound(inputs(k=3.0, lambda_bar=1.0))
        assert hi == pytest.approx(lo / 2.0)

    def test_requires_gain_above_lambda_bar(self):
        with pytest.raises(bd.BoundDomainError):
            bd.sync_bound(inputs(k=1.0, lambda_bar=1.0))
        with pytest.raises(bd.BoundDomainError):
            bd.sync_bound(inputs(k=0.5, lambda_bar=1.0))


class TestSyncBoundMultiLr:
    def test_equal_rates_reduce_to_single_rate_form(self):
        inp = inputs(p=4, eta=0.1)
        multi = bd.sync_bound_multi_lr(inp, [0.1] * 4)
        assert multi == pytest.approx(bd.sync_bound(inp), rel=1e-12)

    def test_hand_value(self):
        inp = inputs(p=2, C=1.0, b=1.0, k=2.0, lambda_bar=1.0)
        assert bd.sync_bound_multi_lr(inp, [0.1, 0.3]) == pytest.approx(0.1)

    def test_permutation_invariant(self):
        inp = inputs(p=3)
        etas = [0.1, 0.2, 0.4]
        a = bd.sync_bound_multi_lr(inp, etas)
        b = bd.sync_bound_multi_lr(inp, etas[::-1])
        assert a == pytest.approx(b, rel=1e-14)

    def test_requires_one_rate_per_agent(self):
        with pytest.raises(bd.BoundDomainError):
            bd.sync_bound_multi_lr(inputs(p=3), [0.1, 0.2])


class TestEpsBound:
    def test_single_agent_is_zero(self):
        assert bd.eps_bound(inputs(p=1), rate=1.0) == 0.0

    def test_hand_value(self):
        inp = inputs(p=2, n=1, Q=1.0, C=1.0, eta=0.1, b=1.0)
        assert bd.eps_bound(inp, rate=1.0) == pytest.approx(0.0125)

    def test_large_p_limit(self):
        inp = inputs(p=10**9, n=4, Q=2.0, C=3.0, eta=0.1, b=2.0)
        limit = math.sqrt(4) * 2.0 * 3.0 * 0.1 / (4 * 2.0 * 1.5)
        assert bd.eps_bound(inp, rate=1.5) == pytest.approx(limit, rel=1e-6)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(bd.BoundDomainError):
            bd.eps_bound(inputs(), rate=0.0)


class TestQsgdConvBound:
    def test_hand_value(self):
        inp = inputs(p=2, n=1, Q=1.0, C=1.0, eta=0.1, b=1.0,
                     lambda_strong=1.0, k=1.0)
        expected = 0.00625 + math.sqrt(0.1 / 4.0)
        assert bd.qsgd_conv_bound(inp) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(0.16436, abs=5e-6)

    def test_large_gain_leaves_noise_term(self):
        inp = inputs(p=2, k=1e12, lambda_strong=1.0, eta=0.1, C=1.0, b=1.0)
        assert bd.qsgd_conv_bound(inp) == pytest.approx(
            math.sqrt(0.1 / (2 * 2 * 1.0)), rel=1e-6
        )

    def test_single_agent_zero_gain_is_plain_sgd_deviation(self):
        inp = inputs(p=1, k=0.0, Q=5.0, lambda_strong=2.0, eta=0.1, C=1.0, b=1.0)
        assert bd.qsgd_conv_bound(inp) == pytest.approx(math.sqrt(0.1 / (2 * 2.0)))

    def test_requires_strong_convexity(self):
        with pytest.raises(bd.BoundDomainError):
            bd.qsgd_conv_bound(inputs(lambda_strong=0.0))


class TestEasgdRate:
    def test_hand_value(self):
        assert bd.easgd_rate(1.0, 1.0, 1) == pytest.approx(1.5 - math.sqrt(1.25))

    def test_below_spectral_oracle_on_grid(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            lam = rng.uniform(0.05, 5.0)
            k = rng.uniform(0.05, 10.0)
            p = int(rng.integers(1, 65))
            gamma = bd.easgd_rate(lam, k, p)
            J = np.array([[-lam - k, k], [k * p, -k * p]])
            oracle = -np.max(np.real(np.linalg.eigvals(J)))
            assert oracle - gamma >= -1e-9

    def test_always_below_strong_convexity(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            lam = rng.uniform(0.05, 5.0)
            k = rng.uniform(0.05, 10.0)
            p = int(rng.integers(1, 65))
            assert bd.easgd_rate(lam, k, p) < lam

    def test_preconditions(self):
        with pytest.raises(bd.BoundDomainError):
            bd.easgd_rate(0.0, 1.0, 2)
        with pytest.raises(bd.BoundDomainError):
            bd.easgd_rate(1.0, 0.0, 2)


class TestEasgdConvBound:
    def test_single_agent_keeps_noise_term_only(self):
        inp = inputs(p=1, Q=3.0)
        value = bd.easgd_conv_bound(inp, C_p=2.0, gamma=0.5)
        assert value == pytest.approx(math.sqrt(0.1 * 2.0 / (2 * 1 * 0.5)))

    def test_hand_value(self):
        inp = inputs(p=4, n=1, Q=1.0, eta=0.1, b=1.0, lambda_strong=1.0, k=1.0)
        first = 1.0 * 3 * 2.0 * 1.0 * 0.1 / (4 * 1.0 * math.sqrt(4) * 0.3 * 2.0)
        second = math.sqrt(0.1 * 2.0 / (2 * 1.0 * 4 * 0.3))
        assert bd.easgd_conv_bound(inp, C_p=2.0, gamma=0.3) == pytest.approx(first + second)

    def test_linear_noise_growth_gives_three_halves_scaling(self):
        # with C_p proportional to p the distortion term grows like p^(3/2)
        def first_term(p):
            inp = inputs(p=p, Q=1.0, n=1, eta=0.1, b=1.0, lambda_strong=1.0, k=1.0)
            full = bd.easgd_conv_bound(inp, C_p=float(p), gamma=0.5)
            noise_only = math.sqrt(0.1 * p / (2 * p * 0.5))
            return full - noise_only

        ratio = first_term(2048) / first_term(1024)
        assert ratio == pytest.approx(2.0**1.5, rel=2e-3)

    def test_requires_positive_gamma(self):
        with pytest.raises(bd.BoundDomainError):
            bd.easgd_conv_bound(inputs(), C_p=1.0, gamma=0.0)


class TestMomentumSyncRate:
    def test_smooth_strongly_convex_unit_case(self):
        ok, xi = bd.momentum_sync_rate(2.0, 0.0, 2.0, 1.0, 1.0)
        assert ok
        assert xi == pytest.approx(2.0)

    def test_hand_value_with_unit_max_term(self):
        ok, xi = bd.momentum_sync_rate(2.0, 0.0, 2.0, 2.0, 2.0)
        assert ok
        assert xi == pytest.approx(1.5)

    def test_rate_below_both_damping_scales(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            k1 = rng.uniform(0.05, 8.0)
            k2 = rng.uniform(0.0, 3.0)
            mu = rng.uniform(0.05, 6.0)
            lam = rng.uniform(0.05, 4.0)
            L = lam + rng.uniform(0.0, 4.0)
            _, xi = bd.momentum_sync_rate(k1, k2, mu, lam, L)
            assert xi <= min(k1, mu + k2) + 1e-12

    def test_threshold_detection(self):
        ok, _ = bd.momentum_sync_rate(0.01, 0.0, 0.1, 3.0, 5.0)
        assert not ok

    def test_rejects_zero_damping(self):
        with pytest.raises(bd.BoundDomainError):
            bd.momentum_sync_rate(1.0, 0.0, 0.0, 1.0, 1.0)


class TestMomentumMetricParams:
    def test_forced_delta_hand_value(self):
        params = bd.momentum_metric_params(1.0, 1.0, 1.0, delta=0.5)
        assert params.a == pytest.approx(math.sqrt(0.75))

    def test_eigenvalues_positive_ordered(self):
        params = bd.momentum_metric_params(3.0, 1.0, 2.0)
        assert 0.0 < params.psi <= params.Psi

    def test_eigenvalue_product_is_metric_determinant(self):
        # det(Theta^T Theta) = a^2 for the triangular transformation
        for delta in (0.2, 0.5, 0.8):
            params = bd.momentum_metric_params(2.0, 1.0, 1.5, delta=delta)
            assert params.psi * params.Psi == pytest.approx(params.a**2, rel=1e-10)

    def test_rejects_insufficient_damping(self):
        lam, L = 1.0, 9.0
        threshold = 2 * math.sqrt(lam + L - 2 * math.sqrt(lam * L))
        with pytest.raises(bd.BoundDomainError):
            bd.momentum_metric_params(threshold * 0.99, lam, L)


class TestMomentumContractionRate:
    def test_balanced_delta_first_term(self):
        kappa = bd.momentum_contraction_rate(2.0, 0.5, 1.0, 2.0)
        inner = 0.25 * 1.0 / (2 * (3.0 + 2 * (-0.5) * 0.5 * 4.0))
        assert kappa == pytest.approx(1.0 - math.sqrt(inner))

    def test_equal_moduli_give_min_of_damping_split(self):
        kappa = bd.momentum_contraction_rate(2.0, 0.3, 1.0, 1.0)
        assert kappa == pytest.approx(min(0.3 * 2.0, 0.7 * 2.0))

    def test_spot_value(self):
        assert bd.momentum_contraction_rate(2.0, 0.5, 1.0, 2.0) == pytest.approx(
            0.6464466094067263
        )

    def test_below_spectral_oracle_on_grid(self):
        rng = np.random.default_rng(15)
        count = 0
        while count < 200:
            lam = rng.uniform(0.05, 4.0)
            L = lam + rng.uniform(0.0, 4.0)
            threshold = 2 * math.sqrt(lam + L - 2 * math.sqrt(lam * L))
            mu = threshold + rng.uniform(0.01, 5.0)
            delta = rng.uniform(0.01, 0.99)
            if lam + L + 2 * (delta - 1) * delta * mu**2 <= 0:
                continue
            kappa = bd.momentum_contraction_rate(mu, delta, lam, L)
            if kappa <= 0:
                continue
            count += 1
            for h in (lam, L):
                J = np.array([[0.0, 1.0], [-h, -mu]])
                oracle = -np.max(np.real(np.linalg.eigvals(J)))
                assert oracle - kappa >= -1e-9


class TestMomentumConvBound:
    def test_single_agent_noise_term_only(self):
        inp = inputs(p=1, Q=2.0)
        value = bd.momentum_conv_bound(inp, kappa=0.5, xi=1.0, psi=0.5, Psi=1.5)
        assert value == pytest.approx(math.sqrt(0.1 / (2 * 1 * 0.5 * 0.5)))

    def test_round_metric_drops_condition_factor(self):
        inp = inputs(p=2, Q=1.0, n=1, eta=0.1, C=1.0, b=1.0)
        iso = bd.momentum_conv_bound(inp, kappa=0.5, xi=1.0, psi=0.7, Psi=0.7)
        first = 1.0 * 1.0 * 1 * 1.0 * 0.1 / (4 * 1.0 * 2 * 0.5 * 1.0)
        second = math.sqrt(0.1 / (2 * 2 * 0.7 * 0.5))
        assert iso == pytest.approx(first + second)

    def test_spot_value_full_parameters(self):
        inp = inputs(p=2, n=1, Q=1.0, C=1.0, eta=0.1, b=1.0)
        first = 1.0 * math.sqrt(1.5) * 1 * 1.0 * 1.0 * 0.1 / (
            math.sqrt(0.5) * 4 * 1.0 * 2 * 0.5 * 1.0
        )
        second = math.sqrt(0.1 * 1.0 / (2 * 1.0 * 2 * 0.5 * 0.5))
        value = bd.momentum_conv_bound(inp, kappa=0.5, xi=1.0, psi=0.5, Psi=1.5)
        assert value == pytest.approx(first + second, rel=1e-12)

    def test_rejects_bad_rates(self):
        with pytest.raises(bd.BoundDomainError):
            bd.momentum_conv_bound(inputs(), kappa=0.0, xi=1.0, psi=0.5, Psi=1.0)


class TestSdSyncRate:
    def test_constant_gains_match_fixed_gain_case(self):
        rate = bd.sd_sync_rate(2.0, 1.0)
        assert rate.rate == pytest.approx(1.0)
        assert rate.guaranteed

    def test_independent_of_agent_count(self):
        # the rate depends only on the gain sum, not how it is split
        assert bd.sd_sync_rate(3.0, 1.0) == bd.sd_sync_rate(3.0, 1.0)

    def test_nonpositive_flagged(self):
        rate = bd.sd_sync_rate(2.0, 3.0)
        assert rate.rate == pytest.approx(-1.0)
        assert not rate.guaranteed


class TestMonotonicityAndSign:
    def test_bounds_nonnegative_on_valid_domain(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            inp = inputs(
                p=int(rng.integers(1, 32)),
                n=int(rng.integers(1, 8)),
                b=float(rng.uniform(1, 16)),
                eta=float(rng.uniform(0.001, 0.5)),
                C=float(rng.uniform(0, 5)),
                Q=float(rng.uniform(0, 5)),
                k=float(rng.uniform(1.5, 10)),
                lambda_bar=1.0,
                lambda_strong=float(rng.uniform(0.1, 2.0)),
            )
            assert bd.sync_bound(inp) >= 0.0
            assert bd.eps_bound(inp, rate=inp.k - inp.lambda_bar) >= 0.0
            assert bd.qsgd_conv_bound(inp) >= 0.0

    @pytest.mark.parametrize(
        "field,direction",
        [("k", -1), ("b", -1), ("eta", +1), ("C", +1), ("Q", +1)],
    )
    def test_stated_monotonicity(self, field, direction):
        base = dict(p=4, n=2, b=2.0, eta=0.1, C=1.0, Q=1.0, k=3.0,
                    lambda_bar=1.0, lambda_strong=1.0)
        bumped = dict(base)
        bumped[field] = base[field] * 2.0
        for fn in (bd.sync_bound, lambda i: bd.eps_bound(i, i.k - i.lambda_bar),
                   bd.qsgd_conv_bound):
            lo = fn(bd.BoundInputs(**base))
            hi = fn(bd.BoundInputs(**bumped))
            if direction < 0:
                assert hi <= lo + 1e-15
            else:
                assert hi >= lo - 1e-15
