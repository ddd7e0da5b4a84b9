"""Markov chain samplers for the joint channel/parameter posterior.

Two samplers target the same augmented posterior over (alpha, beta, h, g, w):

* :func:`run_pmcmc` -- marginal Metropolis-Hastings whose likelihood is an
  unbiased Rao-Blackwellised particle filter estimate and whose static
  parameter proposal is an adaptive two-component Gaussian mixture.  Both
  mixture components are random walks, so the proposal ratio cancels and
  acceptance depends only on the likelihood-estimate and prior ratios.
* :func:`run_gibbs` -- a deterministic-scan MH-within-Gibbs baseline that
  updates (alpha, beta) and fixed-length sub-blocks of each latent
  trajectory with tuned random-walk proposals.

The incumbent state's likelihood estimate is cached and never refreshed;
re-running the filter for the current state would break the exact
approximation property of the marginal chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .filtering import DegenerateFilterError, run_rbsir
from .model import (
    Frame,
    LatentPath,
    NoiseConfig,
    PriorConfig,
    RelayFunction,
    StaticParams,
    log_cn,
    log_static_prior_vector,
    sample_cn,
    sample_static_prior,
    simulate_frame,
)

__all__ = [
    "AdaptiveState",
    "ChainState",
    "ChainTrace",
    "SamplerConfig",
    "GibbsConfig",
    "adaptive_propose",
    "update_adaptive",
    "pmcmc_step",
    "run_pmcmc",
    "gibbs_block_step",
    "run_gibbs",
]

ADAPTIVE_SCALE = 2.38  # optimal random-walk scaling constant
FIXED_SCALE = 0.1


@dataclass(frozen=True)
class AdaptiveState:
    """Online mean/covariance of the chain's static-parameter history.

    ``running_covariance`` reproduces the batch sample covariance (ddof=1) of
    the absorbed states.  The adaptive mixture component stays inactive until
    ``iteration`` exceeds ``warmup``.
    """

    iteration: int
    running_mean: np.ndarray
    m2: np.ndarray
    w1: float = 0.95
    warmup: int = 100

    @classmethod
    def initial(cls, dim: int, w1: float = 0.95, warmup: int = 100) -> "AdaptiveState":
        return cls(0, np.zeros(dim), np.zeros((dim, dim)), w1, warmup)

    @property
    def dim(self) -> int:
        return self.running_mean.shape[0]

    @property
    def running_covariance(self) -> np.ndarray:
        if self.iteration < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.iteration - 1)


def update_adaptive(adapt: AdaptiveState, new_params) -> AdaptiveState:
    """Absorb one chain state (StaticParams or flat vector) into the running moments."""
    x = new_params.as_vector() if isinstance(new_params, StaticParams) else np.asarray(new_params, float)
    j = adapt.iteration + 1
    delta = x - adapt.running_mean
    mean = adapt.running_mean + delta / j
    m2 = adapt.m2 + np.outer(delta, x - mean)
    return replace(adapt, iteration=j, running_mean=mean, m2=m2)


def adaptive_propose(current, adapt: AdaptiveState, rng: np.random.Generator) -> np.ndarray:
    """Draw a random-walk proposal from the two-component Gaussian mixture.

    With probability ``w1`` (once past warmup) the step covariance is
    ``2.38^2/d`` times the running empirical covariance; otherwise (and as a
    fallback when that covariance is singular) it is ``0.1^2/d`` times the
    identity.  The returned flat vector may land outside (0, 1); the prior
    evaluation downstream turns that into a certain rejection.
    """
    x = current.as_vector() if isinstance(current, StaticParams) else np.asarray(current, float)
    d = adapt.dim
    if x.shape != (d,):
        raise ValueError(f"current state has dimension {x.shape}, expected ({d},)")
    if adapt.iteration > adapt.warmup and rng.uniform() < adapt.w1:
        cov = (ADAPTIVE_SCALE**2 / d) * adapt.running_covariance
        try:
            chol = np.linalg.cholesky(cov)
            return x + chol @ rng.standard_normal(d)
        except np.linalg.LinAlgError:
            pass  # singular covariance: fall through to the fixed component
    return x + (FIXED_SCALE / math.sqrt(d)) * rng.standard_normal(d)


@dataclass(frozen=True)
class ChainState:
    """One Markov chain state with its cached log quantities."""

    params: StaticParams
    path: LatentPath
    log_prior: float
    log_marginal_likelihood: Optional[float] = None
    log_joint: Optional[float] = None


@dataclass
class ChainTrace:
    """Recorded chain output: thinned states plus per-iteration accept flags."""

    states: list
    accepted: np.ndarray
    burnin: int
    thin: int = 1
    block_acceptance: Optional[dict] = None

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    @property
    def iterations(self) -> int:
        return len(self.accepted)

    def post_burnin_states(self) -> list:
        return self.states[math.ceil(self.burnin / self.thin):]

    def param_draws(self, post_burnin: bool = True) -> np.ndarray:
        """Stack stored static-parameter vectors into an (M, 2L) array."""
        states = self.post_burnin_states() if post_burnin else self.states
        if not states:
            raise ValueError("no stored states in the requested range")
        return np.stack([s.params.as_vector() for s in states])


@dataclass(frozen=True)
class SamplerConfig:
    """Configuration for the particle marginal Metropolis-Hastings chain."""

    iterations: int
    burnin: int
    n_particles: int
    thin: int = 1
    seed: Optional[int] = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    noise: Optional[NoiseConfig] = None
    relay: Optional[RelayFunction] = None
    w1: float = 0.95
    warmup: int = 100
    resample_threshold: float = 0.8
    initial_params: Optional[StaticParams] = None

    def __post_init__(self):
        if self.iterations <= self.burnin:
            raise ValueError("iterations must exceed burnin")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


def resolve_noise_relay(cfg_noise, cfg_relay, frame: Frame):
    """Fill in the default SNR-derived noise and power-normalized AF relay."""
    noise = cfg_noise if cfg_noise is not None else NoiseConfig.from_snr_db(frame.config.snr_db)
    relay = cfg_relay if cfg_relay is not None else RelayFunction.power_normalized(noise)
    return noise, relay


def _filter_estimator(frame: Frame, cfg: SamplerConfig) -> Callable:
    noise, relay = resolve_noise_relay(cfg.noise, cfg.relay, frame)

    def estimate(params: StaticParams, rng: np.random.Generator):
        out = run_rbsir(frame, params, noise, relay, cfg.n_particles, rng, cfg.resample_threshold)
        return out.log_marginal_likelihood, out.path

    return estimate


def pmcmc_step(
    state: ChainState,
    adapt: AdaptiveState,
    frame: Frame,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    estimator: Optional[Callable] = None,
):
    """One marginal MH iteration.

    Proposals outside the prior support are rejected before the filter runs,
    and a degenerate filter counts as a zero likelihood estimate (certain
    rejection).  The adaptive state absorbs the realized post-accept/reject
    parameters.  Returns (state, adapt, accepted).
    """
    if estimator is None:
        estimator = _filter_estimator(frame, cfg)
    L = frame.config.n_relays
    proposal = adaptive_propose(state.params.as_vector(), adapt, rng)
    log_prior = log_static_prior_vector(proposal, L, cfg.prior)
    accepted = False
    new_state = state
    if np.isfinite(log_prior):
        prop_params = StaticParams.from_vector(proposal)
        try:
            log_ml, path = estimator(prop_params, rng)
        except DegenerateFilterError:
            log_ml, path = -np.inf, None
        log_ratio = (log_ml + log_prior) - (state.log_marginal_likelihood + state.log_prior)
        if np.isfinite(log_ml) and rng.uniform() < math.exp(min(0.0, log_ratio)):
            accepted = True
            new_state = ChainState(
                params=prop_params,
                path=path,
                log_prior=log_prior,
                log_marginal_likelihood=log_ml,
            )
    return new_state, update_adaptive(adapt, new_state.params), accepted


def run_pmcmc(
    frame: Frame,
    cfg: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
    estimator: Optional[Callable] = None,
    progress: Optional[Callable] = None,
) -> ChainTrace:
    """Run the full adaptive particle marginal Metropolis-Hastings chain.

    The chain initializes from the priors, running one filter for the
    initial likelihood estimate and trajectory.  ``estimator`` may replace
    the default particle filter with any callable
    ``(params, rng) -> (log_marginal_likelihood, path)``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if estimator is None:
        estimator = _filter_estimator(frame, cfg)
    thin = cfg.thin
    if thin == 1 and cfg.iterations > 100_000:
        thin = 10  # memory guard for very long chains
    L = frame.config.n_relays

    for _ in range(100):
        params0 = cfg.initial_params if cfg.initial_params is not None else sample_static_prior(cfg.prior, L, rng)
        try:
            log_ml0, path0 = estimator(params0, rng)
            break
        except DegenerateFilterError:
            if cfg.initial_params is not None:
                raise
            continue
    else:
        raise DegenerateFilterError("could not initialize the chain from the prior")
    state = ChainState(
        params=params0,
        path=path0,
        log_prior=log_static_prior_vector(params0.as_vector(), L, cfg.prior),
        log_marginal_likelihood=log_ml0,
    )
    adapt = update_adaptive(AdaptiveState.initial(2 * L, cfg.w1, cfg.warmup), state.params)

    states = []
    accepted = np.zeros(cfg.iterations, dtype=bool)
    for j in range(1, cfg.iterations + 1):
        state, adapt, acc = pmcmc_step(state, adapt, frame, cfg, rng, estimator)
        accepted[j - 1] = acc
        if j % thin == 0:
            states.append(state)
        if progress is not None:
            progress(j, cfg.iterations)
    return ChainTrace(states=states, accepted=accepted, burnin=cfg.burnin, thin=thin)


# ---------------------------------------------------------------------------
# Deterministic-scan MH-within-Gibbs baseline
# ---------------------------------------------------------------------------

GIBBS_TARGETS = ("STATIC", "G", "H", "W")


@dataclass
class GibbsConfig:
    """Configuration for the blocked Gibbs baseline.

    The latent trajectories split into ``block_count`` sub-blocks of
    ``block_length`` symbols with ``block_count * block_length == T``.
    ``rw_scales`` maps each target to its per-block proposal standard
    deviations; when None the scales are pre-tuned toward 20 % acceptance by
    stochastic approximation.
    """

    iterations: int
    burnin: int
    block_length: int = 10
    thin: int = 1
    seed: Optional[int] = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    noise: Optional[NoiseConfig] = None
    relay: Optional[RelayFunction] = None
    rw_scales: Optional[dict] = None
    tuning_iterations: int = 50
    target_acceptance: float = 0.2
    initial_params: Optional[StaticParams] = None

    def block_count(self, n_symbols: int) -> int:
        if n_symbols % self.block_length:
            raise ValueError(
                f"block_length {self.block_length} must divide the frame length {n_symbols}"
            )
        return n_symbols // self.block_length


def _gm_node_terms(x, coeffs, stationary_var, lo, hi):
    """Sum of Gauss-Markov node log densities for time indices [lo, hi)."""
    coeffs = np.asarray(coeffs, dtype=float)[:, None]
    total = 0.0
    if lo == 0:
        total += float(log_cn(x[:, 0], 0.0, stationary_var).sum())
        lo = 1
    if lo < hi:
        var = (1.0 - coeffs**2) * stationary_var
        total += float(log_cn(x[:, lo:hi], coeffs * x[:, lo - 1 : hi - 1], var).sum())
    return total


def _obs_terms(frame, h, g, w, relay, sigma2_v, lo, hi):
    s = frame.config.pilots[None, lo:hi]
    mean = relay.apply(s * h[:, lo:hi] + w[:, lo:hi]) * g[:, lo:hi]
    return float(log_cn(frame.y[:, lo:hi], mean, sigma2_v).sum())


def _block_delta(target, frame, noise, relay, prior, params_vec, h, g, w, lo, hi, new_block, L, T):
    """Log-density change from replacing one coordinate block.

    Only terms touching the block enter; everything else cancels in the MH
    ratio, which keeps a block update O(block length) instead of O(T).
    """
    sigma2_v = noise.sigma2_v
    if target == "STATIC":
        old_lp = log_static_prior_vector(params_vec, L, prior)
        new_lp = log_static_prior_vector(new_block, L, prior)
        if not np.isfinite(new_lp):
            return -np.inf, None
        alpha_old, beta_old = params_vec[:L], params_vec[L:]
        alpha_new, beta_new = new_block[:L], new_block[L:]
        delta = new_lp - old_lp
        delta += _gm_node_terms(h, alpha_new, noise.sigma2_h, 0, T) - _gm_node_terms(
            h, alpha_old, noise.sigma2_h, 0, T
        )
        delta += _gm_node_terms(g, beta_new, noise.sigma2_g, 0, T) - _gm_node_terms(
            g, beta_old, noise.sigma2_g, 0, T
        )
        return delta, None

    alpha, beta = params_vec[:L], params_vec[L:]
    hi_node = min(hi + 1, T)  # include the transition out of the block
    if target == "H":
        old = _gm_node_terms(h, alpha, noise.sigma2_h, lo, hi_node)
        old += _obs_terms(frame, h, g, w, relay, sigma2_v, lo, hi)
        new_h = h.copy()
        new_h[:, lo:hi] = new_block
        new = _gm_node_terms(new_h, alpha, noise.sigma2_h, lo, hi_node)
        new += _obs_terms(frame, new_h, g, w, relay, sigma2_v, lo, hi)
        return new - old, new_h
    if target == "G":
        old = _gm_node_terms(g, beta, noise.sigma2_g, lo, hi_node)
        old += _obs_terms(frame, h, g, w, relay, sigma2_v, lo, hi)
        new_g = g.copy()
        new_g[:, lo:hi] = new_block
        new = _gm_node_terms(new_g, beta, noise.sigma2_g, lo, hi_node)
        new += _obs_terms(frame, h, new_g, w, relay, sigma2_v, lo, hi)
        return new - old, new_g
    if target == "W":
        old = float(log_cn(w[:, lo:hi], 0.0, noise.sigma2_w).sum())
        old += _obs_terms(frame, h, g, w, relay, sigma2_v, lo, hi)
        new_w = w.copy()
        new_w[:, lo:hi] = new_block
        new = float(log_cn(new_w[:, lo:hi], 0.0, noise.sigma2_w).sum())
        new += _obs_terms(frame, h, g, new_w, relay, sigma2_v, lo, hi)
        return new - old, new_w
    raise ValueError(f"unknown Gibbs target {target!r}")


def gibbs_block_step(
    state: ChainState,
    block: range,
    target: str,
    frame: Frame,
    scale: float,
    rng: np.random.Generator,
    noise: NoiseConfig,
    relay: RelayFunction,
    prior: PriorConfig,
):
    """Random-walk MH update of one coordinate block, all others held fixed.

    ``target`` selects the latent trajectory ("G", "H", "W" over the time
    indices in ``block``) or the static parameters ("STATIC", ``block``
    ignored).  Returns (state, accepted).
    """
    if scale < 0:
        raise ValueError("proposal scale must be >= 0")
    L, T = frame.config.n_relays, frame.config.n_symbols
    params_vec = state.params.as_vector()
    h, g, w = state.path.h, state.path.g, state.path.w
    if target == "STATIC":
        lo = hi = 0
        proposal = params_vec + scale * rng.standard_normal(2 * L)
    else:
        lo, hi = block.start, block.stop
        if not (0 <= lo < hi <= T):
            raise ValueError(f"block {block} out of range for frame length {T}")
        current = {"G": g, "H": h, "W": w}[target][:, lo:hi]
        proposal = current + sample_cn(rng, scale * scale, current.shape)

    delta, new_component = _block_delta(
        target, frame, noise, relay, prior, params_vec, h, g, w, lo, hi, proposal, L, T
    )
    if not np.isfinite(delta) or rng.uniform() >= math.exp(min(0.0, delta)):
        return state, False

    new_joint = None if state.log_joint is None else state.log_joint + delta
    if target == "STATIC":
        new_state = ChainState(
            params=StaticParams.from_vector(proposal),
            path=state.path,
            log_prior=log_static_prior_vector(proposal, L, prior),
            log_joint=new_joint,
        )
    else:
        parts = {"h": h, "g": g, "w": w}
        parts[target.lower()] = new_component
        new_state = ChainState(
            params=state.params,
            path=LatentPath(**parts),
            log_prior=state.log_prior,
            log_joint=new_joint,
        )
    return new_state, True


def _initial_gibbs_state(frame, cfg, noise, relay, rng):
    from .model import log_joint_density

    if cfg.initial_params is not None:
        params = cfg.initial_params
    else:
        params = sample_static_prior(cfg.prior, frame.config.n_relays, rng)
    prior_frame = simulate_frame(params, frame.config, noise, relay, rng)
    path = prior_frame.truth_path
    return ChainState(
        params=params,
        path=path,
        log_prior=log_static_prior_vector(params.as_vector(), frame.config.n_relays, cfg.prior),
        log_joint=log_joint_density(params, path, frame, noise, relay, cfg.prior),
    )


def _scan_blocks(cfg: GibbsConfig, T: int):
    """Deterministic scan order: STATIC, then every G, H, W block."""
    k = cfg.block_count(T)
    tau = cfg.block_length
    scan = [("STATIC", range(0), 0)]
    for target in ("G", "H", "W"):
        for b in range(k):
            scan.append((target, range(b * tau, (b + 1) * tau), b))
    return scan


def tune_gibbs_scales(frame, cfg, noise, relay, rng) -> dict:
    """Stochastic-approximation pre-run targeting ~20 % per-block acceptance."""
    T = frame.config.n_symbols
    k = cfg.block_count(T)
    scales = {"STATIC": np.full(1, 0.05), "G": np.full(k, 0.5), "H": np.full(k, 0.5), "W": np.full(k, 0.5)}
    state = _initial_gibbs_state(frame, cfg, noise, relay, rng)
    for i in range(cfg.tuning_iterations):
        gamma = 0.5 / math.sqrt(i + 1)
        for target, block, b in _scan_blocks(cfg, T):
            sc = scales[target][b if target != "STATIC" else 0]
            state, acc = gibbs_block_step(state, block, target, frame, sc, rng, noise, relay, cfg.prior)
            idx = b if target != "STATIC" else 0
            scales[target][idx] = sc * math.exp(gamma * ((1.0 if acc else 0.0) - cfg.target_acceptance))
    return scales


def run_gibbs(
    frame: Frame,
    cfg: GibbsConfig,
    rng: Optional[np.random.Generator] = None,
    progress: Optional[Callable] = None,
) -> ChainTrace:
    """Run the deterministic-scan Gibbs baseline.

    Each iteration updates the static parameters, then every G, H and W
    block in order.  ``ChainTrace.accepted`` records the STATIC update;
    per-target block acceptance rates land in ``trace.block_acceptance``
    (with the scan-wide mean under "overall").  States store the augmented
    joint log density in ``log_joint``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.iterations <= cfg.burnin:
        raise ValueError("iterations must exceed burnin")
    noise, relay = resolve_noise_relay(cfg.noise, cfg.relay, frame)
    T = frame.config.n_symbols
    scan = _scan_blocks(cfg, T)
    scales = cfg.rw_scales
    if scales is None:
        scales = tune_gibbs_scales(frame, cfg, noise, relay, rng)

    state = _initial_gibbs_state(frame, cfg, noise, relay, rng)
    states = []
    accepted = np.zeros(cfg.iterations, dtype=bool)
    counts = {t: 0 for t in GIBBS_TARGETS}
    accepts = {t: 0 for t in GIBBS_TARGETS}
    for j in range(1, cfg.iterations + 1):
        for target, block, b in scan:
            sc = scales[target][b if target != "STATIC" else 0]
            state, acc = gibbs_block_step(state, block, target, frame, sc, rng, noise, relay, cfg.prior)
            counts[target] += 1
            accepts[target] += acc
            if target == "STATIC":
                accepted[j - 1] = acc
        if j % cfg.thin == 0:
            states.append(state)
        if progress is not None:
            progress(j, cfg.iterations)
    block_acc = {t: accepts[t] / counts[t] for t in GIBBS_TARGETS}
    block_acc["overall"] = sum(accepts.values()) / sum(counts.values())
    return ChainTrace(
        states=states,
        accepted=accepted,
        burnin=cfg.burnin,
        thin=cfg.thin,
        block_acceptance=block_acc,
    )
