import math

import numpy as np
import pytest

import relaytrack as rt
from relaytrack import samplers
from relaytrack.model import log_joint_density, sample_cn
from relaytrack.samplers import (
    AdaptiveState,
    ChainState,
    GibbsConfig,
    SamplerConfig,
    _block_delta,
    adaptive_propose,
    gibbs_block_step,
    pmcmc_step,
    run_gibbs,
    run_pmcmc,
    update_adaptive,
)

from oracles import batch_mean_cov


def _adapt_with_cov(dim, cov, iteration=1000, w1=1.0):
    return AdaptiveState(
        iteration=iteration,
        running_mean=np.zeros(dim),
        m2=np.asarray(cov, dtype=float) * (iteration - 1),
        w1=w1,
        warmup=100,
    )


class TestAdaptivePropose:
    def test_fixed_component_std_before_warmup(self, rng):
        adapt = AdaptiveState.initial(2)
        current = np.array([0.5, 0.5])
        draws = np.array([adaptive_propose(current, adapt, rng) for _ in range(100_000)])
        steps = draws - current
        expected = 0.1 / math.sqrt(2)
        np.testing.assert_allclose(steps.std(axis=0), expected, rtol=0.02)

    def test_adaptive_component_scaling(self, rng):
        adapt = _adapt_with_cov(2, np.eye(2))
        current = np.array([0.4, 0.6])
        draws = np.array([adaptive_propose(current, adapt, rng) for _ in range(100_000)])
        steps = draws - current
        np.testing.assert_allclose(steps.std(axis=0), 2.38 / math.sqrt(2), rtol=0.02)

    def test_random_walk_symmetry(self, rng):
        # both mixture components center on the current state
        adapt = _adapt_with_cov(2, 0.01 * np.eye(2), w1=0.5)
        current = np.array([0.3, 0.7])
        draws = np.array([adaptive_propose(current, adapt, rng) for _ in range(20_000)])
        np.testing.assert_allclose(draws.mean(axis=0), current, atol=5e-3)

    def test_singular_covariance_falls_back(self, rng):
        adapt = _adapt_with_cov(2, np.zeros((2, 2)))
        current = np.array([0.5, 0.5])
        draws = np.array([adaptive_propose(current, adapt, rng) for _ in range(20_000)])
        steps = draws - current
        np.testing.assert_allclose(steps.std(axis=0), 0.1 / math.sqrt(2), rtol=0.05)


class TestUpdateAdaptive:
    def test_identical_states_zero_covariance(self):
        adapt = AdaptiveState.initial(2)
        x = np.array([0.4, 0.8])
        for _ in range(2):
            adapt = update_adaptive(adapt, x)
        np.testing.assert_allclose(adapt.running_covariance, 0.0, atol=1e-15)

    def test_two_point_variance(self):
        adapt = AdaptiveState.initial(2)
        adapt = update_adaptive(adapt, np.array([0.2, 0.4]))
        adapt = update_adaptive(adapt, np.array([0.4, 0.2]))
        np.testing.assert_allclose(np.diag(adapt.running_covariance), 0.02, atol=1e-12)

    def test_uniform_pairs_match_twelfth(self, rng):
        adapt = AdaptiveState.initial(2)
        draws = rng.uniform(size=(10_000, 2))
        for x in draws:
            adapt = update_adaptive(adapt, x)
        cov = adapt.running_covariance
        np.testing.assert_allclose(np.diag(cov), 1.0 / 12.0, rtol=0.05)
        assert abs(cov[0, 1]) < 0.01

    def test_matches_batch_covariance(self, rng):
        adapt = AdaptiveState.initial(3)
        draws = rng.normal(size=(200, 3))
        for x in draws:
            adapt = update_adaptive(adapt, x)
        mean_ref, cov_ref = batch_mean_cov(draws)
        np.testing.assert_allclose(adapt.running_mean, mean_ref, atol=1e-10)
        np.testing.assert_allclose(adapt.running_covariance, cov_ref, atol=1e-10)

    def test_diminishing_adaptation_rate(self, rng):
        adapt = AdaptiveState.initial(2)
        draws = rng.uniform(size=(10_000, 2))
        norms = []
        prev = adapt.running_covariance
        for x in draws:
            adapt = update_adaptive(adapt, x)
            cur = adapt.running_covariance
            norms.append(np.linalg.norm(cur - prev, 2))
            prev = cur
        j = np.arange(1000, 10_000)
        slope = np.polyfit(np.log(j), np.log(np.array(norms)[1000:10_000]), 1)[0]
        assert -1.3 <= slope <= -0.7


def _tiny_chain_inputs(seed=0, T=24, snr=15.0):
    noise = rt.NoiseConfig.from_snr_db(snr)
    relay = rt.RelayFunction.power_normalized(noise)
    truth = rt.StaticParams(alpha=[0.95], beta=[0.95])
    frame = rt.simulate_frame(
        truth, rt.FrameConfig.with_unit_pilots(T, 1, snr), noise, relay, np.random.default_rng(seed)
    )
    return frame, noise, relay


class TestPmcmcStep:
    def _state(self, frame):
        path = frame.truth_path
        params = frame.truth_params
        return ChainState(
            params=params,
            path=path,
            log_prior=rt.model.log_static_prior(params, rt.PriorConfig()),
            log_marginal_likelihood=-50.0,
        )

    def test_out_of_support_skips_filter(self, monkeypatch, rng):
        frame, noise, relay = _tiny_chain_inputs()
        cfg = SamplerConfig(iterations=10, burnin=1, n_particles=10, noise=noise, relay=relay)
        state = self._state(frame)
        adapt = update_adaptive(AdaptiveState.initial(2), state.params)
        monkeypatch.setattr(samplers, "adaptive_propose", lambda *a, **k: np.array([1.3, 0.5]))

        def boom(params, rng_):
            raise AssertionError("filter must not run for out-of-support proposals")

        new_state, new_adapt, accepted = pmcmc_step(state, adapt, frame, cfg, rng, estimator=boom)
        assert not accepted
        assert new_state is state
        assert new_adapt.iteration == adapt.iteration + 1

    def test_rejection_keeps_state_bit_identical(self, rng):
        frame, noise, relay = _tiny_chain_inputs()
        cfg = SamplerConfig(iterations=10, burnin=1, n_particles=10, noise=noise, relay=relay)
        state = self._state(frame)
        adapt = update_adaptive(AdaptiveState.initial(2), state.params)
        reject_all = lambda params, rng_: (-1e9, frame.truth_path)
        new_state, _, accepted = pmcmc_step(state, adapt, frame, cfg, rng, estimator=reject_all)
        assert not accepted
        assert new_state is state  # params, path and cached values untouched

    def test_acceptance_caches_new_likelihood(self, rng):
        frame, noise, relay = _tiny_chain_inputs()
        cfg = SamplerConfig(iterations=10, burnin=1, n_particles=10, noise=noise, relay=relay)
        state = self._state(frame)
        adapt = update_adaptive(AdaptiveState.initial(2), state.params)
        accept_all = lambda params, rng_: (1e6, frame.truth_path)
        new_state, _, accepted = pmcmc_step(state, adapt, frame, cfg, rng, estimator=accept_all)
        assert accepted
        assert new_state.log_marginal_likelihood == 1e6
        assert new_state.params is not state.params


class TestRunPmcmc:
    def test_trace_shape_and_thinning(self):
        frame, noise, relay = _tiny_chain_inputs()
        cfg = SamplerConfig(iterations=60, burnin=12, n_particles=20, thin=3, noise=noise, relay=relay, seed=4)
        trace = run_pmcmc(frame, cfg)
        assert len(trace.accepted) == 60
        assert len(trace.states) == 20
        assert trace.acceptance_rate == np.mean(trace.accepted)
        assert np.isfinite(trace.states[-1].log_marginal_likelihood)

    def test_seeded_reproducibility(self):
        frame, noise, relay = _tiny_chain_inputs()
        cfg = SamplerConfig(iterations=40, burnin=10, n_particles=15, noise=noise, relay=relay, seed=9)
        t1 = run_pmcmc(frame, cfg)
        t2 = run_pmcmc(frame, cfg)
        np.testing.assert_array_equal(t1.accepted, t2.accepted)
        np.testing.assert_array_equal(t1.param_draws(post_burnin=False), t2.param_draws(post_burnin=False))

    def test_initial_params_override(self):
        frame, noise, relay = _tiny_chain_inputs()
        start = rt.StaticParams(alpha=[0.5], beta=[0.5])
        cfg = SamplerConfig(
            iterations=5, burnin=1, n_particles=10, noise=noise, relay=relay, seed=2, initial_params=start
        )
        trace = run_pmcmc(frame, cfg)
        assert len(trace.states) == 5


class TestGibbsBlockStep:
    def setup_method(self):
        self.frame, self.noise, self.relay = _tiny_chain_inputs(seed=3, T=20)
        self.prior = rt.PriorConfig()
        params = self.frame.truth_params
        self.state = ChainState(
            params=params,
            path=self.frame.truth_path,
            log_prior=rt.model.log_static_prior(params, self.prior),
            log_joint=log_joint_density(
                params, self.frame.truth_path, self.frame, self.noise, self.relay, self.prior
            ),
        )

    def test_identical_proposal_always_accepted(self, rng):
        new_state, accepted = gibbs_block_step(
            self.state, range(0, 5), "G", self.frame, 0.0, rng, self.noise, self.relay, self.prior
        )
        assert accepted
        np.testing.assert_array_equal(new_state.path.g, self.state.path.g)

    def test_static_out_of_support_rejected(self):
        rng = np.random.default_rng(0)
        new_state, accepted = gibbs_block_step(
            self.state, range(0), "STATIC", self.frame, 50.0, rng, self.noise, self.relay, self.prior
        )
        assert not accepted
        assert new_state is self.state

    @pytest.mark.parametrize("target", ["G", "H", "W"])
    def test_block_delta_matches_full_joint(self, target, rng):
        lo, hi = 4, 9
        current = {"G": self.state.path.g, "H": self.state.path.h, "W": self.state.path.w}[target]
        proposal = current[:, lo:hi] + sample_cn(rng, 0.04, current[:, lo:hi].shape)
        delta, new_comp = _block_delta(
            target, self.frame, self.noise, self.relay, self.prior,
            self.state.params.as_vector(),
            self.state.path.h, self.state.path.g, self.state.path.w,
            lo, hi, proposal, 1, self.frame.config.n_symbols,
        )
        parts = {"h": self.state.path.h, "g": self.state.path.g, "w": self.state.path.w}
        parts[target.lower()] = new_comp
        new_path = rt.LatentPath(**parts)
        full_delta = log_joint_density(
            self.state.params, new_path, self.frame, self.noise, self.relay, self.prior
        ) - log_joint_density(
            self.state.params, self.state.path, self.frame, self.noise, self.relay, self.prior
        )
        assert delta == pytest.approx(full_delta, abs=1e-10)

    def test_static_delta_matches_full_joint(self, rng):
        proposal = self.state.params.as_vector() + np.array([0.01, -0.02])
        delta, _ = _block_delta(
            "STATIC", self.frame, self.noise, self.relay, self.prior,
            self.state.params.as_vector(),
            self.state.path.h, self.state.path.g, self.state.path.w,
            0, 0, proposal, 1, self.frame.config.n_symbols,
        )
        full_delta = log_joint_density(
            rt.StaticParams.from_vector(proposal), self.state.path, self.frame, self.noise, self.relay, self.prior
        ) - log_joint_density(
            self.state.params, self.state.path, self.frame, self.noise, self.relay, self.prior
        )
        assert delta == pytest.approx(full_delta, abs=1e-10)


class TestRunGibbs:
    def test_unit_block_length_supported(self):
        frame, noise, relay = _tiny_chain_inputs(seed=5, T=12)
        cfg = GibbsConfig(
            iterations=30, burnin=5, block_length=1, noise=noise, relay=relay, seed=1, tuning_iterations=5
        )
        trace = run_gibbs(frame, cfg)
        assert len(trace.states) == 30
        assert set(trace.block_acceptance) == {"STATIC", "G", "H", "W", "overall"}

    def test_block_length_must_divide_frame(self):
        frame, noise, relay = _tiny_chain_inputs(seed=5, T=12)
        cfg = GibbsConfig(iterations=10, burnin=2, block_length=5, noise=noise, relay=relay)
        with pytest.raises(ValueError, match="divide"):
            run_gibbs(frame, cfg)

    def test_log_joint_climbs_during_burnin(self):
        frame, noise, relay = _tiny_chain_inputs(seed=6, T=20, snr=20.0)
        cfg = GibbsConfig(
            iterations=120, burnin=20, block_length=5, noise=noise, relay=relay, seed=3, tuning_iterations=10
        )
        trace = run_gibbs(frame, cfg)
        lj = np.array([s.log_joint for s in trace.states])
        assert np.isfinite(lj).all()
        assert lj[-20:].mean() > lj[:5].mean()

    def test_tuned_acceptance_near_target(self):
        frame, noise, relay = _tiny_chain_inputs(seed=7, T=20)
        cfg = GibbsConfig(
            iterations=150, burnin=30, block_length=5, noise=noise, relay=relay, seed=8, tuning_iterations=40
        )
        trace = run_gibbs(frame, cfg)
        assert 0.05 <= trace.block_acceptance["overall"] <= 0.5

    def test_seeded_reproducibility(self):
        frame, noise, relay = _tiny_chain_inputs(seed=5, T=12)
        cfg = GibbsConfig(
            iterations=25, burnin=5, block_length=4, noise=noise, relay=relay, seed=11, tuning_iterations=5
        )
        a = run_gibbs(frame, cfg)
        b = run_gibbs(frame, cfg)
        np.testing.assert_array_equal(a.param_draws(post_burnin=False), b.param_draws(post_burnin=False))
