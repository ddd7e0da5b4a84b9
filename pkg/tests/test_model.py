import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import relaytrack as rt
from relaytrack.model import (
    apply_relay,
    jakes_step,
    log_cn,
    log_joint_density,
    log_obs_density,
    log_static_prior,
    sample_cn,
    sample_static_prior,
)

from oracles import beta_logpdf_lgamma, complex_gaussian_logpdf_pair


class TestTypes:
    def test_noise_config_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            rt.NoiseConfig(sigma2_w=0.0, sigma2_v=1.0)
        with pytest.raises(ValueError):
            rt.NoiseConfig(sigma2_w=1.0, sigma2_v=-0.5)

    def test_snr_mapping(self):
        noise = rt.NoiseConfig.from_snr_db(15.0)
        assert noise.sigma2_w == pytest.approx(10 ** (-1.5))
        assert noise.sigma2_v == pytest.approx(10 ** (-1.5))
        assert noise.sigma2_h == 1.0 and noise.sigma2_g == 1.0

    def test_static_params_open_interval(self):
        with pytest.raises(ValueError):
            rt.StaticParams(alpha=[1.0], beta=[0.5])
        with pytest.raises(ValueError):
            rt.StaticParams(alpha=[0.5], beta=[0.0])
        p = rt.StaticParams(alpha=[0.2, 0.9], beta=[0.5, 0.7])
        assert p.n_relays == 2
        np.testing.assert_allclose(
            rt.StaticParams.from_vector(p.as_vector()).alpha, p.alpha
        )

    def test_frame_config_checks_pilots(self):
        with pytest.raises(ValueError):
            rt.FrameConfig(4, 1, np.array([1.0, 0.0, 1.0, 1.0]), 10.0)
        with pytest.raises(ValueError):
            rt.FrameConfig(1, 1, np.array([1.0]), 10.0)

    def test_relay_function_validation(self):
        with pytest.raises(ValueError):
            rt.RelayFunction.amplify_forward(-1.0)
        with pytest.raises(ValueError):
            rt.RelayFunction(kind="decode", gain=1.0)


class TestStaticPrior:
    def test_beta_mean_matches_shape_ratio(self):
        # Beta(10, 0.6) mean is 10/10.6.
        rng = np.random.default_rng(0)
        prior = rt.PriorConfig()
        many = sample_static_prior(prior, 100_000, rng)
        assert many.alpha.mean() == pytest.approx(10.0 / 10.6, abs=0.003)
        assert many.beta.mean() == pytest.approx(10.0 / 10.6, abs=0.003)

    def test_uniform_special_case_ks(self):
        rng = np.random.default_rng(1)
        prior = rt.PriorConfig(a=1.0, b=1.0, c=1.0, d=1.0)
        draws = sample_static_prior(prior, 100_000, rng)
        ks = stats.kstest(draws.alpha, "uniform")
        assert ks.statistic < 0.01

    def test_relay_count_shapes(self, rng):
        p = sample_static_prior(rt.PriorConfig(), 3, rng)
        assert p.alpha.shape == (3,) and p.beta.shape == (3,)
        assert np.all((p.alpha > 0) & (p.alpha < 1))
        assert np.all((p.beta > 0) & (p.beta < 1))


class TestJakesStep:
    def test_near_unit_coefficient_is_persistent(self):
        prev = 0.3 - 0.4j
        out = jakes_step(prev, 1.0 - 1e-12, 1.0 + 1.0j)
        assert abs(out - prev) < 1e-5

    def test_zero_coefficient_is_memoryless(self):
        innov = 0.7 + 0.2j
        assert jakes_step(5.0 + 5.0j, 1e-300, innov) == pytest.approx(innov)

    def test_rejects_boundary_coefficients(self):
        with pytest.raises(ValueError):
            jakes_step(0j, 1.0, 0j)
        with pytest.raises(ValueError):
            jakes_step(0j, 0.0, 0j)

    def test_lag_one_autocorrelation(self, rng):
        coeff = 0.95
        n = 100_000
        x = np.empty(n, dtype=complex)
        x[0] = sample_cn(rng, 1.0)
        innov = sample_cn(rng, 1.0, n)
        for t in range(1, n):
            x[t] = jakes_step(x[t - 1], coeff, innov[t])
        num = np.mean(np.conj(x[:-1]) * x[1:]).real
        den = np.mean(np.abs(x) ** 2)
        assert num / den == pytest.approx(coeff, abs=0.01)

    def test_stationary_variance_preserved(self, rng):
        # 1e5 parallel paths, marginal variance stays at 1 after many steps
        coeff = 0.9
        x = sample_cn(rng, 1.0, 100_000)
        for _ in range(30):
            x = jakes_step(x, coeff, sample_cn(rng, 1.0, 100_000))
        assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, abs=0.02)


class TestRelay:
    def test_amplify_forward_scales(self):
        f = rt.RelayFunction.amplify_forward(2.0)
        assert apply_relay(f, 1.0 + 0.0j) == 2.0 + 0.0j

    def test_identity_passthrough(self):
        f = rt.RelayFunction.identity()
        r = 0.3 - 0.7j
        assert apply_relay(f, r) == r

    def test_power_normalizing_gain(self):
        noise = rt.NoiseConfig(sigma2_w=0.1, sigma2_v=1.0)
        f = rt.RelayFunction.power_normalized(noise, pilot_power=1.0)
        assert f.gain == pytest.approx(math.sqrt(1.0 / 1.1))
        assert f.gain == pytest.approx(0.9535, abs=5e-5)

    @given(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False),
           st.floats(min_value=1e-3, max_value=1e3))
    def test_af_linearity(self, r, gain):
        f = rt.RelayFunction.amplify_forward(gain)
        assert apply_relay(f, 2.0 * r) == pytest.approx(2.0 * apply_relay(f, r))


class TestSimulateFrame:
    def test_noiseless_identity_is_product_channel(self, rng):
        # tiny noise floors stand in for zero (variances must stay positive)
        noise = rt.NoiseConfig(sigma2_w=1e-30, sigma2_v=1e-30)
        truth = rt.StaticParams(alpha=[0.9], beta=[0.9])
        frame = rt.simulate_frame(
            truth, rt.FrameConfig.with_unit_pilots(32, 1, 100.0), noise, rt.RelayFunction.identity(), rng
        )
        np.testing.assert_allclose(frame.y, frame.truth_path.h * frame.truth_path.g, atol=1e-10)

    def test_paper_generating_configuration_runs(self, rng):
        noise = rt.NoiseConfig.from_snr_db(15.0)
        truth = rt.StaticParams(alpha=[0.95], beta=[0.95])
        frame = rt.simulate_frame(
            truth,
            rt.FrameConfig.with_unit_pilots(100, 1, 15.0),
            noise,
            rt.RelayFunction.power_normalized(noise),
            rng,
        )
        assert frame.y.shape == (1, 100)
        assert frame.has_truth

    def test_first_symbol_output_variance(self, rng):
        # var(y_1) = A^2 (|s|^2 sigma2_h + sigma2_w) sigma2_g + sigma2_v
        noise = rt.NoiseConfig(sigma2_w=0.1, sigma2_v=0.05)
        relay = rt.RelayFunction.power_normalized(noise)
        truth = rt.StaticParams(alpha=[0.5], beta=[0.5])
        cfg = rt.FrameConfig.with_unit_pilots(2, 1, 10.0)
        ys = np.array(
            [rt.simulate_frame(truth, cfg, noise, relay, rng).y[0, 0] for _ in range(10_000)]
        )
        expected = relay.gain**2 * (1.0 + 0.1) * 1.0 + 0.05
        assert np.mean(np.abs(ys) ** 2) == pytest.approx(expected, rel=0.03)

    def test_cross_relay_independence(self, rng):
        noise = rt.NoiseConfig.from_snr_db(15.0)
        a = 0.9
        truth = rt.StaticParams(alpha=[a, a], beta=[a, a])
        frame = rt.simulate_frame(
            truth, rt.FrameConfig.with_unit_pilots(20_000, 2, 15.0), noise, rt.RelayFunction.identity(), rng
        )
        h = frame.truth_path.h
        corr = np.mean(np.conj(h[0]) * h[1])
        # temporal autocorrelation shrinks the effective sample count
        n_eff = h.shape[1] * (1 - a * a) / (1 + a * a)
        assert abs(corr) < 3.0 / math.sqrt(n_eff)


class TestObsDensity:
    def test_zero_residual_peak(self):
        f = rt.RelayFunction.identity()
        y = (1.0 + 1.0j) * (0.5 - 0.2j)
        val = log_obs_density(y, 1.0 + 1.0j, 0.5 - 0.2j, 0.0j, 1.0 + 0.0j, f, 1.0)
        assert val == pytest.approx(math.log(1.0 / math.pi))

    def test_one_sigma_residual(self):
        f = rt.RelayFunction.identity()
        sigma2_v = 0.3
        # place y one "sigma" from the mean: |residual|^2 = sigma2_v
        val = log_obs_density(math.sqrt(sigma2_v) + 0.0j, 0.0j, 1.0 + 0.0j, 0.0j, 1e-300 + 0j, f, sigma2_v)
        assert val == pytest.approx(-math.log(math.pi * sigma2_v) - 1.0)

    def test_matches_real_pair_gaussian(self, rng):
        f = rt.RelayFunction.amplify_forward(1.3)
        for _ in range(50):
            y, h, g, w, s = (sample_cn(rng, 1.0) for _ in range(5))
            sigma2_v = float(rng.uniform(0.05, 2.0))
            mean = f.apply(s * h + w) * g
            ours = log_obs_density(y, h, g, w, s, f, sigma2_v)
            ref = complex_gaussian_logpdf_pair(complex(y), complex(mean), sigma2_v)
            assert ours == pytest.approx(ref, abs=1e-12)

    def test_rejects_nonfinite(self):
        f = rt.RelayFunction.identity()
        with pytest.raises(ValueError, match="invalid density argument"):
            log_obs_density(complex(np.nan, 0.0), 0j, 0j, 0j, 1.0 + 0j, f, 1.0)

    def test_density_integrates_to_one(self):
        # 2-d trapezoid over y for a fixed mean and variance
        f = rt.RelayFunction.identity()
        sigma2_v = 0.5
        axis = np.linspace(-6, 6, 601)
        re, im = np.meshgrid(axis, axis, indexing="ij")
        y = re + 1j * im
        dens = np.exp(log_obs_density(y, 0.2 + 0.1j, 1.0 + 0.0j, 0.0j, 1.0 + 0.0j, f, sigma2_v))
        integral = np.trapezoid(np.trapezoid(dens, axis, axis=1), axis)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_average_log_density_at_simulated_truth(self, rng):
        noise = rt.NoiseConfig(sigma2_w=0.2, sigma2_v=0.4)
        relay = rt.RelayFunction.power_normalized(noise)
        truth = rt.StaticParams(alpha=[0.9], beta=[0.9])
        cfg = rt.FrameConfig.with_unit_pilots(500, 1, 5.0)
        vals = []
        for _ in range(100):
            frame = rt.simulate_frame(truth, cfg, noise, relay, rng)
            p = frame.truth_path
            vals.append(
                np.mean(
                    log_obs_density(
                        frame.y, p.h, p.g, p.w, cfg.pilots[None, :], relay, noise.sigma2_v
                    )
                )
            )
        assert np.mean(vals) == pytest.approx(-1.0 - math.log(math.pi * noise.sigma2_v), abs=0.02)


class TestStaticPriorDensity:
    def test_outside_support_is_minus_inf(self):
        prior = rt.PriorConfig()
        assert rt.model.log_static_prior_vector(np.array([1.3, 0.5]), 1, prior) == -math.inf
        assert rt.model.log_static_prior_vector(np.array([0.5, -0.1]), 1, prior) == -math.inf

    def test_uniform_prior_log_density_zero(self):
        prior = rt.PriorConfig(a=1.0, b=1.0, c=1.0, d=1.0)
        p = rt.StaticParams(alpha=[0.5], beta=[0.5])
        assert log_static_prior(p, prior) == pytest.approx(0.0, abs=1e-12)

    def test_matches_lgamma_oracle(self):
        prior = rt.PriorConfig()
        p = rt.StaticParams(alpha=[0.95], beta=[0.8])
        expected = beta_logpdf_lgamma(0.95, 10.0, 0.6) + beta_logpdf_lgamma(0.8, 10.0, 0.6)
        assert log_static_prior(p, prior) == pytest.approx(expected, abs=1e-10)

    @given(st.floats(min_value=0.01, max_value=0.99), st.floats(min_value=0.01, max_value=0.99))
    @settings(max_examples=30, deadline=None)
    def test_lgamma_oracle_property(self, a_val, b_val):
        prior = rt.PriorConfig(a=3.0, b=2.0, c=1.5, d=4.0)
        p = rt.StaticParams(alpha=[a_val], beta=[b_val])
        expected = beta_logpdf_lgamma(a_val, 3.0, 2.0) + beta_logpdf_lgamma(b_val, 1.5, 4.0)
        assert log_static_prior(p, prior) == pytest.approx(expected, abs=1e-10)


class TestJointDensity:
    def test_outside_support_short_circuits(self, small_frame):
        frame, noise, relay = small_frame
        bad = np.array([1.2, 0.5])
        assert rt.model.log_static_prior_vector(bad, 1, rt.PriorConfig()) == -math.inf

    def test_term_by_term_against_manual_sum(self, small_frame):
        frame, noise, relay = small_frame
        prior = rt.PriorConfig()
        params = frame.truth_params
        path = frame.truth_path
        total = log_joint_density(params, path, frame, noise, relay, prior)

        manual = log_static_prior(params, prior)
        a, b = params.alpha[0], params.beta[0]
        manual += log_cn(path.h[0, 0], 0.0, noise.sigma2_h)
        manual += log_cn(path.g[0, 0], 0.0, noise.sigma2_g)
        for t in range(1, frame.config.n_symbols):
            manual += log_cn(path.h[0, t], a * path.h[0, t - 1], (1 - a * a) * noise.sigma2_h)
            manual += log_cn(path.g[0, t], b * path.g[0, t - 1], (1 - b * b) * noise.sigma2_g)
        manual += log_cn(path.w, 0.0, noise.sigma2_w).sum()
        for t in range(frame.config.n_symbols):
            manual += log_obs_density(
                frame.y[0, t], path.h[0, t], path.g[0, t], path.w[0, t],
                frame.config.pilots[t], relay, noise.sigma2_v,
            )
        assert total == pytest.approx(manual, abs=1e-10)
