"""Independent reference computations used to pin expected test values.

Everything here is deliberately written from first principles (direct
formulas, dense covariance assembly, grid integration) and never calls the
code paths it checks.
"""

import math

import numpy as np


def beta_logpdf_lgamma(x: float, a: float, b: float) -> float:
    """Beta log density via the log-gamma function, independent of scipy."""
    if not 0.0 < x < 1.0:
        return -math.inf
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    return log_norm + (a - 1.0) * math.log(x) + (b - 1.0) * math.log(1.0 - x)


def complex_gaussian_logpdf_pair(y: complex, mean: complex, var: float) -> float:
    """CN(mean, var) log density via two independent real N(., var/2) factors."""
    s2 = var / 2.0
    out = 0.0
    for d in ((y - mean).real, (y - mean).imag):
        out += -0.5 * math.log(2.0 * math.pi * s2) - d * d / (2.0 * s2)
    return out


def evidence_given_hw(y, c, beta, sigma2_g, sigma2_v):
    """Exact log evidence of y_t = c_t g_t + v_t with AR(1) g, by dense covariance.

    Assembles cov(y) = diag(c) K diag(c)^H + sigma2_v I with the stationary
    AR(1) covariance K[i, j] = sigma2_g * beta^|i-j| and evaluates the joint
    circular complex Gaussian density directly.
    """
    y = np.asarray(y, dtype=complex)
    c = np.asarray(c, dtype=complex)
    T = y.shape[0]
    idx = np.arange(T)
    K = sigma2_g * beta ** np.abs(idx[:, None] - idx[None, :])
    cov = np.diag(c) @ K @ np.conj(np.diag(c)).T + sigma2_v * np.eye(T)
    sign, logdet = np.linalg.slogdet(cov)
    quad = (np.conj(y) @ np.linalg.solve(cov, y)).real
    return float(-T * math.log(math.pi) - logdet.real - quad)


def kalman_posterior_by_grid(mu0, sigma0, y, c, sigma2_v, half_width=5.0, step=0.01):
    """Posterior mean/variance of g from one observation, by 2-d grid integration.

    Prior CN(mu0, sigma0), likelihood CN(y; c*g, sigma2_v); integrates over a
    real/imaginary grid centered at zero.
    """
    axis = np.arange(-half_width, half_width + step / 2, step)
    re, im = np.meshgrid(axis, axis, indexing="ij")
    g = re + 1j * im
    log_post = -np.abs(g - mu0) ** 2 / sigma0 - np.abs(y - c * g) ** 2 / sigma2_v
    log_post -= log_post.max()
    post = np.exp(log_post)
    z = post.sum()
    mean = (g * post).sum() / z
    var = (np.abs(g - mean) ** 2 * post).sum() / z
    return complex(mean), float(var)


def batch_mean_cov(samples: np.ndarray):
    """Plain batch mean and ddof=1 covariance for online-update checks."""
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    n = samples.shape[0]
    if n < 2:
        return mean, np.zeros((samples.shape[1], samples.shape[1]))
    centered = samples - mean
    return mean, centered.T @ centered / (n - 1)


def plain_sir_log_evidence(frame, params, noise, relay, n_particles, rng, threshold=0.8):
    """Bootstrap SIR over (h, g, w) jointly: g sampled from its prior too.

    Reference filter for the Rao-Blackwellisation variance-reduction check;
    weights use the full observation density instead of the g-marginalized
    predictive, with the same stratified resampling and evidence bookkeeping.
    """
    y = frame.y
    s = frame.config.pilots
    L, T = y.shape
    n = n_particles
    log_ml = 0.0
    for l in range(L):
        alpha = float(params.alpha[l])
        beta = float(params.beta[l])
        sa = math.sqrt(1.0 - alpha * alpha)
        sb = math.sqrt(1.0 - beta * beta)

        def cn(var, size=None):
            sc = math.sqrt(var / 2.0)
            return sc * (rng.standard_normal(size) + 1j * rng.standard_normal(size))

        h = cn(noise.sigma2_h, n)
        g = cn(noise.sigma2_g, n)
        w = cn(noise.sigma2_w, n)
        logw = np.full(n, -math.log(n))
        for t in range(T):
            if t > 0:
                h = alpha * h + sa * cn(noise.sigma2_h, n)
                g = beta * g + sb * cn(noise.sigma2_g, n)
                w = cn(noise.sigma2_w, n)
            mean = relay.apply(s[t] * h + w) * g
            d = y[l, t] - mean
            loglik = -math.log(math.pi * noise.sigma2_v) - (d.real**2 + d.imag**2) / noise.sigma2_v
            unnorm = logw + loglik
            m = unnorm.max()
            step_ev = m + math.log(np.exp(unnorm - m).sum())
            log_ml += step_ev
            logw = unnorm - step_ev
            wn = np.exp(logw)
            if t < T - 1 and 1.0 / np.square(wn).sum() < threshold * n:
                u = (np.arange(n) + rng.uniform(size=n)) / n
                idx = np.minimum(np.searchsorted(np.cumsum(wn), u), n - 1)
                h, g, w = h[idx], g[idx], w[idx]
                logw = np.full(n, -math.log(n))
    return log_ml
