"""Rao-Blackwellised sequential importance resampling filter.

The filter targets the latent trajectories of one frame conditional on a
fixed set of AR coefficients.  Particles carry the nonlinear sub-state
(h, w); the conditionally linear-Gaussian stage g is marginalized per
particle by a scalar Kalman filter, so importance weights use the
g-marginalized predictive likelihood

    CN(y_t ; c_t * mu_pred, |c_t|^2 * sigma_pred + sigma2_v),
    c_t = relay(s_t * h_t + w_t).

Because the posterior factorizes over parallel relay paths, the full filter
runs as independent single-relay filters whose log marginal likelihoods sum.
The returned trajectory is one ancestral lineage of (h, w) with g drawn
exactly by backward simulation from the stored per-step Kalman moments.

Weights live in the log domain throughout; the marginal likelihood
accumulates per step as logsumexp(previous normalized log weights +
incremental log likelihoods), which reduces to the mean incremental
likelihood whenever the previous step resampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    Frame,
    LatentPath,
    NoiseConfig,
    RelayFunction,
    StaticParams,
    log_cn,
    sample_cn,
)

__all__ = [
    "DegenerateFilterError",
    "KalmanStat",
    "Particle",
    "ParticleSystem",
    "FilterOutput",
    "kalman_predict",
    "kalman_update",
    "init_particle_system",
    "propagate_particles",
    "weight_and_normalize",
    "stratified_resample",
    "maybe_resample",
    "run_rbsir",
]


class DegenerateFilterError(RuntimeError):
    """All particle weights vanished; the likelihood estimate is zero."""


_LOG_PI = math.log(math.pi)


def _logsumexp(a: np.ndarray) -> float:
    m = a.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + math.log(np.exp(a - m).sum()))


@dataclass(frozen=True)
class KalmanStat:
    """Filtered mean and variance of g; fields may be scalars or arrays."""

    mu: object
    sigma: object


def kalman_predict(stat: KalmanStat, beta, stationary_var: float = 1.0) -> KalmanStat:
    """AR(1) moment propagation: mu' = beta*mu, sigma' = beta^2*sigma + (1-beta^2)*var."""
    b2 = np.multiply(beta, beta)
    return KalmanStat(mu=beta * stat.mu, sigma=b2 * stat.sigma + (1.0 - b2) * stationary_var)


def kalman_update(pred: KalmanStat, y, c, sigma2_v: float):
    """Condition the predictive moments on one observation y = c*g + v.

    Returns the filtered moments together with the predictive log likelihood
    log CN(y; c*mu, |c|^2*sigma + sigma2_v), the quantity that weights a
    Rao-Blackwellised particle.
    """
    if not (math.isfinite(sigma2_v) and sigma2_v > 0):
        raise ValueError(f"sigma2_v must be finite and > 0, got {sigma2_v}")
    for val in (y, c):
        arr = np.asarray(val)
        if not np.all(np.isfinite(arr.real) & np.isfinite(arr.imag)):
            raise ValueError("invalid update: non-finite observation or map")
    c = np.asarray(c)
    c_mag2 = c.real * c.real + c.imag * c.imag
    s_pred = c_mag2 * pred.sigma + sigma2_v
    log_lik = log_cn(y, c * pred.mu, s_pred)
    gain = pred.sigma * np.conj(c) / s_pred
    mu = pred.mu + gain * (y - c * pred.mu)
    sigma = np.maximum((1.0 - (gain * c).real) * pred.sigma, 0.0)
    return KalmanStat(mu=mu, sigma=sigma), log_lik


@dataclass(frozen=True)
class Particle:
    """Single-particle view: nonlinear states plus Kalman statistics per relay."""

    h: np.ndarray
    w: np.ndarray
    kalman: KalmanStat
    ancestor: int


@dataclass
class ParticleSystem:
    """Weighted particle cloud over (h, w) with attached Kalman statistics.

    ``h``, ``w`` and the Kalman moment arrays have shape (N, L); log weights
    are kept normalized (logsumexp zero).  ``incremental_log_likelihoods``
    collects one evidence increment per assimilated observation.
    """

    h: np.ndarray
    w: np.ndarray
    kalman: KalmanStat
    log_weights: np.ndarray
    incremental_log_likelihoods: list = field(default_factory=list)
    ancestors: Optional[np.ndarray] = None

    @property
    def n_particles(self) -> int:
        return self.h.shape[0]

    @property
    def ess(self) -> float:
        w = np.exp(self.log_weights - self.log_weights.max())
        w /= w.sum()
        return float(1.0 / np.square(w).sum())

    def particle(self, i: int) -> Particle:
        anc = int(self.ancestors[i]) if self.ancestors is not None else i
        return Particle(
            h=self.h[i],
            w=self.w[i],
            kalman=KalmanStat(mu=self.kalman.mu[i], sigma=self.kalman.sigma[i]),
            ancestor=anc,
        )


def init_particle_system(
    n_particles: int, n_relays: int, noise: NoiseConfig, rng: np.random.Generator
) -> ParticleSystem:
    """Draw the time-1 cloud from the stationary priors with prior Kalman moments."""
    if n_particles < 2:
        raise ValueError(f"need at least 2 particles, got {n_particles}")
    shape = (n_particles, n_relays)
    return ParticleSystem(
        h=sample_cn(rng, noise.sigma2_h, shape),
        w=sample_cn(rng, noise.sigma2_w, shape),
        kalman=KalmanStat(mu=np.zeros(shape, dtype=complex), sigma=np.full(shape, noise.sigma2_g)),
        log_weights=np.full(n_particles, -math.log(n_particles)),
    )


def propagate_particles(
    sys: ParticleSystem,
    params: StaticParams,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Bootstrap mutation: h follows its AR step, w is redrawn from its prior,
    and the Kalman moments take one predict step."""
    alpha = params.alpha[None, :]
    shape = sys.h.shape
    h = alpha * sys.h + np.sqrt(1.0 - alpha**2) * sample_cn(rng, noise.sigma2_h, shape)
    w = sample_cn(rng, noise.sigma2_w, shape)
    kalman = kalman_predict(sys.kalman, params.beta[None, :], noise.sigma2_g)
    return ParticleSystem(
        h=h,
        w=w,
        kalman=kalman,
        log_weights=sys.log_weights,
        incremental_log_likelihoods=sys.incremental_log_likelihoods,
    )


def weight_and_normalize(
    sys: ParticleSystem,
    y_t: np.ndarray,
    s_t: complex,
    relay: RelayFunction,
    sigma2_v: float,
) -> ParticleSystem:
    """Assimilate one observation vector: weight, condition and renormalize.

    The incremental weight of a particle is its g-marginalized Kalman
    predictive log likelihood summed over relays; the same innovation then
    updates the particle's Kalman moments.  The evidence increment
    logsumexp(log_weights + increment) is appended before renormalizing.
    """
    y_t = np.atleast_1d(np.asarray(y_t, dtype=complex))
    c = relay.apply(s_t * sys.h + sys.w)
    kalman, log_lik = kalman_update(sys.kalman, y_t[None, :], c, sigma2_v)
    unnorm = sys.log_weights + log_lik.sum(axis=1)
    step_evidence = _logsumexp(unnorm)
    if not np.isfinite(step_evidence):
        raise DegenerateFilterError("all particle weights vanished: zero likelihood estimate")
    return ParticleSystem(
        h=sys.h,
        w=sys.w,
        kalman=kalman,
        log_weights=unnorm - step_evidence,
        incremental_log_likelihoods=sys.incremental_log_likelihoods + [step_evidence],
    )


def stratified_resample(weights: np.ndarray, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Stratified resampling: one uniform draw per equal-probability stratum.

    ``weights`` must already be normalized; the expected count of index i in
    the returned ancestor vector equals size * weights[i].
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be nonnegative and sum to 1")
    n = len(weights) if size is None else int(size)
    u = (np.arange(n) + rng.uniform(size=n)) / n
    return np.minimum(np.searchsorted(np.cumsum(weights), u), len(weights) - 1)


def maybe_resample(
    sys: ParticleSystem,
    rng: np.random.Generator,
    threshold_fraction: float = 0.8,
):
    """Resample to uniform weights when ESS < threshold_fraction * N.

    Returns the (possibly new) system and the ancestor indices, or None when
    no resampling was triggered.
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError(f"threshold_fraction must lie in (0, 1], got {threshold_fraction}")
    n = sys.n_particles
    if sys.ess >= threshold_fraction * n:
        return sys, None
    idx = stratified_resample(np.exp(sys.log_weights), rng)
    resampled = ParticleSystem(
        h=sys.h[idx],
        w=sys.w[idx],
        kalman=KalmanStat(mu=sys.kalman.mu[idx], sigma=sys.kalman.sigma[idx]),
        log_weights=np.full(n, -math.log(n)),
        incremental_log_likelihoods=sys.incremental_log_likelihoods,
        ancestors=idx,
    )
    return resampled, idx


@dataclass
class FilterDiagnostics:
    """Per-relay filter history kept only on request (memory heavy)."""

    h_history: np.ndarray  # (L, T, N)
    w_history: np.ndarray  # (L, T, N)
    parents: np.ndarray  # (L, T, N) index into the previous step's cloud
    lineage: np.ndarray  # (L, T) sampled ancestral indices


@dataclass
class FilterOutput:
    """One sampled trajectory plus the evidence estimate and run diagnostics."""

    path: LatentPath
    log_marginal_likelihood: float
    ess_trace: np.ndarray
    resample_count: int
    diagnostics: Optional[FilterDiagnostics] = None


def _sample_lineage_and_g(
    final_log_weights, h_hist, w_hist, mu_hist, sig_hist, parents, beta, sigma2_g, rng
):
    """Draw one ancestral (h, w) lineage and backward-simulate g along it."""
    T, n_particles = h_hist.shape
    final_w = np.exp(final_log_weights)
    final_w /= final_w.sum()
    lineage = np.empty(T, dtype=np.int64)
    lineage[T - 1] = rng.choice(n_particles, p=final_w)
    for t in range(T - 1, 0, -1):
        lineage[t - 1] = parents[t][lineage[t]]

    steps = np.arange(T)
    h_path = h_hist[steps, lineage]
    w_path = w_hist[steps, lineage]
    mu_line = mu_hist[steps, lineage]
    sig_line = sig_hist[steps, lineage]

    # Backward simulation of g from the filtered moments along the lineage.
    g_path = np.empty(T, dtype=complex)
    g_path[T - 1] = mu_line[T - 1] + sample_cn(rng, max(sig_line[T - 1], 0.0))
    b2 = beta * beta
    for t in range(T - 2, -1, -1):
        pred_var = b2 * sig_line[t] + (1.0 - b2) * sigma2_g
        gain = sig_line[t] * beta / pred_var
        mean = mu_line[t] + gain * (g_path[t + 1] - beta * mu_line[t])
        var = max((1.0 - gain * beta) * sig_line[t], 0.0)
        g_path[t] = mean + sample_cn(rng, var)
    return h_path, g_path, w_path, lineage


def _run_single_relay_ops(
    y: np.ndarray,
    pilots: np.ndarray,
    alpha: float,
    beta: float,
    noise: NoiseConfig,
    relay: RelayFunction,
    n_particles: int,
    rng: np.random.Generator,
    resample_threshold: float,
    pinned: Optional[tuple] = None,
):
    """Filter one relay path by composing the public operations.

    Reference implementation: the fused fast path below must consume the
    random stream in exactly this order and reproduce these results.
    """
    T = y.shape[0]
    params = StaticParams(alpha=[alpha], beta=[beta])
    sys = init_particle_system(n_particles, 1, noise, rng)
    if pinned is not None:
        sys.h = np.full((n_particles, 1), pinned[0][0], dtype=complex)
        sys.w = np.full((n_particles, 1), pinned[1][0], dtype=complex)

    h_hist = np.empty((T, n_particles), dtype=complex)
    w_hist = np.empty((T, n_particles), dtype=complex)
    mu_hist = np.empty((T, n_particles), dtype=complex)
    sig_hist = np.empty((T, n_particles))
    parents = np.empty((T, n_particles), dtype=np.int64)
    parents[0] = np.arange(n_particles)
    ess_trace = np.empty(T)
    resample_count = 0
    carry = np.arange(n_particles)

    for t in range(T):
        if t > 0:
            parents[t] = carry
            sys = propagate_particles(sys, params, noise, rng)
            if pinned is not None:
                sys.h = np.full((n_particles, 1), pinned[0][t], dtype=complex)
                sys.w = np.full((n_particles, 1), pinned[1][t], dtype=complex)
        sys = weight_and_normalize(sys, y[t : t + 1], pilots[t], relay, noise.sigma2_v)
        h_hist[t] = sys.h[:, 0]
        w_hist[t] = sys.w[:, 0]
        mu_hist[t] = sys.kalman.mu[:, 0]
        sig_hist[t] = sys.kalman.sigma[:, 0]
        ess_trace[t] = sys.ess
        if t < T - 1:
            sys, idx = maybe_resample(sys, rng, resample_threshold)
            if idx is not None:
                resample_count += 1
                carry = idx
            else:
                carry = np.arange(n_particles)

    h_path, g_path, w_path, lineage = _sample_lineage_and_g(
        sys.log_weights, h_hist, w_hist, mu_hist, sig_hist, parents, beta, noise.sigma2_g, rng
    )
    log_ml = float(np.sum(sys.incremental_log_likelihoods))
    return h_path, g_path, w_path, log_ml, ess_trace, resample_count, (h_hist, w_hist, parents, lineage)


def _run_single_relay_fast(
    y: np.ndarray,
    pilots: np.ndarray,
    alpha: float,
    beta: float,
    noise: NoiseConfig,
    relay: RelayFunction,
    n_particles: int,
    rng: np.random.Generator,
    resample_threshold: float,
):
    """Fused inner loop: same arithmetic and random-stream order as
    :func:`_run_single_relay_ops`, minus per-step object and validation
    overhead (the filter dominates every sampler iteration)."""
    T = y.shape[0]
    n = n_particles
    s2h, s2g, s2w, s2v = noise.sigma2_h, noise.sigma2_g, noise.sigma2_w, noise.sigma2_v
    gain_c = relay.gain if relay.kind == "amplify-forward" else 1.0
    identity = relay.kind == "identity"
    shape = (n, 1)
    scale_h = math.sqrt(1.0 - alpha * alpha)
    b2 = beta * beta
    log_n = math.log(n)
    threshold = resample_threshold * n
    arange_n = np.arange(n)

    h = sample_cn(rng, s2h, shape)
    w = sample_cn(rng, s2w, shape)
    mu = np.zeros(shape, dtype=complex)
    sig = np.full(shape, s2g)
    logw = np.full(n, -log_n)

    h_hist = np.empty((T, n), dtype=complex)
    w_hist = np.empty((T, n), dtype=complex)
    mu_hist = np.empty((T, n), dtype=complex)
    sig_hist = np.empty((T, n))
    parents = np.empty((T, n), dtype=np.int64)
    parents[0] = arange_n
    ess_trace = np.empty(T)
    resample_count = 0
    log_ml = 0.0
    resampled = False

    for t in range(T):
        if t > 0:
            parents[t] = idx if resampled else arange_n
            h = alpha * h + scale_h * sample_cn(rng, s2h, shape)
            w = sample_cn(rng, s2w, shape)
            mu = beta * mu
            sig = b2 * sig + (1.0 - b2) * s2g

        # Incremental weight: g-marginalized predictive likelihood (then the
        # matching Kalman measurement update); mirrors kalman_update exactly.
        c = pilots[t] * h + w
        if not identity:
            c = gain_c * c
        c_mag2 = c.real * c.real + c.imag * c.imag
        s_pred = c_mag2 * sig + s2v
        d = y[t] - c * mu
        log_lik = -(_LOG_PI + np.log(s_pred)) - (d.real * d.real + d.imag * d.imag) / s_pred
        k_gain = sig * np.conj(c) / s_pred
        mu = mu + k_gain * (y[t] - c * mu)
        sig = np.maximum((1.0 - (k_gain * c).real) * sig, 0.0)

        unnorm = logw + log_lik.sum(axis=1)
        m = unnorm.max()
        if not np.isfinite(m):
            raise DegenerateFilterError("all particle weights vanished: zero likelihood estimate")
        p = np.exp(unnorm - m)
        tot = p.sum()
        log_ml += m + math.log(tot)
        logw = unnorm - (m + math.log(tot))

        h_hist[t] = h[:, 0]
        w_hist[t] = w[:, 0]
        mu_hist[t] = mu[:, 0]
        sig_hist[t] = sig[:, 0]

        # ESS from the normalized weights (same arithmetic as the property).
        wn = np.exp(logw - logw.max())
        wn /= wn.sum()
        ess = 1.0 / np.square(wn).sum()
        ess_trace[t] = ess

        resampled = False
        if t < T - 1 and ess < threshold:
            weights = np.exp(logw)
            u = (arange_n + rng.uniform(size=n)) / n
            idx = np.minimum(np.searchsorted(np.cumsum(weights), u), n - 1)
            h = h[idx]
            w = w[idx]
            mu = mu[idx]
            sig = sig[idx]
            logw = np.full(n, -log_n)
            resample_count += 1
            resampled = True

    h_path, g_path, w_path, lineage = _sample_lineage_and_g(
        logw, h_hist, w_hist, mu_hist, sig_hist, parents, beta, s2g, rng
    )
    return h_path, g_path, w_path, log_ml, ess_trace, resample_count, (h_hist, w_hist, parents, lineage)


def _run_single_relay(
    y, pilots, alpha, beta, noise, relay, n_particles, rng, resample_threshold, pinned=None
):
    if pinned is not None:
        return _run_single_relay_ops(
            y, pilots, alpha, beta, noise, relay, n_particles, rng, resample_threshold, pinned
        )
    return _run_single_relay_fast(
        y, pilots, alpha, beta, noise, relay, n_particles, rng, resample_threshold
    )


def run_rbsir(
    frame: Frame,
    params: StaticParams,
    noise: NoiseConfig,
    relay: RelayFunction,
    n_particles: int,
    rng: np.random.Generator,
    resample_threshold: float = 0.8,
    keep_history: bool = False,
    conditioned_on: Optional[LatentPath] = None,
) -> FilterOutput:
    """Run the Rao-Blackwellised SIR filter over a full frame.

    One independent single-relay filter runs per parallel relay path and the
    per-relay log marginal likelihoods sum.  ``ess_trace`` is averaged across
    relays and ``resample_count`` summed.

    ``conditioned_on`` pins the (h, w) particles to a fixed trajectory, which
    turns the run into an exact conditional Kalman evidence evaluation with
    no Monte Carlo variance in g; this is a validation hook.
    """
    if n_particles < 2:
        raise ValueError(f"need at least 2 particles, got {n_particles}")
    if params.n_relays != frame.config.n_relays:
        raise ValueError("params and frame disagree on the number of relays")
    L, T = frame.config.n_relays, frame.config.n_symbols

    h = np.empty((L, T), dtype=complex)
    g = np.empty((L, T), dtype=complex)
    w = np.empty((L, T), dtype=complex)
    log_ml = 0.0
    ess = np.zeros(T)
    resamples = 0
    diag = None
    if keep_history:
        diag = FilterDiagnostics(
            h_history=np.empty((L, T, n_particles), dtype=complex),
            w_history=np.empty((L, T, n_particles), dtype=complex),
            parents=np.empty((L, T, n_particles), dtype=np.int64),
            lineage=np.empty((L, T), dtype=np.int64),
        )
    for l in range(L):
        pinned = None
        if conditioned_on is not None:
            pinned = (conditioned_on.h[l], conditioned_on.w[l])
        out = _run_single_relay(
            frame.y[l],
            frame.config.pilots,
            float(params.alpha[l]),
            float(params.beta[l]),
            noise,
            relay,
            n_particles,
            rng,
            resample_threshold,
            pinned=pinned,
        )
        h[l], g[l], w[l] = out[0], out[1], out[2]
        log_ml += out[3]
        ess += out[4]
        resamples += out[5]
        if diag is not None:
            h_hist, w_hist, parents, lineage = out[6]
            diag.h_history[l] = h_hist
            diag.w_history[l] = w_hist
            diag.parents[l] = parents
            diag.lineage[l] = lineage

    return FilterOutput(
        path=LatentPath(h=h, g=g, w=w),
        log_marginal_likelihood=log_ml,
        ess_trace=ess / L,
        resample_count=resamples,
        diagnostics=diag,
    )
