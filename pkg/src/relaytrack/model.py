"""Generative model for dual-hop relay frames.

A source transmits known pilot symbols through ``L`` parallel relays to a
destination.  Each relay path has two flat-fading channel stages: source to
relay (``h``) and relay to destination (``g``), both following first-order
Gauss-Markov dynamics that approximate Jakes' Doppler spectrum.  The relay
applies a memoryless function (amplify-and-forward or identity) to its noisy
input and retransmits, so the destination observes

    y[l, t] = relay(s[t] * h[l, t] + w[l, t]) * g[l, t] + v[l, t]

with relay-side noise ``w`` and destination noise ``v``.

Complex Gaussian convention: ``CN(mu, var)`` has independent real and
imaginary parts, each ``N(Re/Im(mu), var / 2)``, so ``var`` is the total
second moment ``E|x - mu|^2`` and the density is
``exp(-|x - mu|^2 / var) / (pi * var)``.

All value types are immutable after construction and every random draw goes
through an explicit ``numpy.random.Generator``, so operations are pure and
thread-safe as long as each thread owns its own generator (see
:func:`relaytrack.harness.derive_rng` for the seed-derivation scheme).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

__all__ = [
    "NoiseConfig",
    "RelayFunction",
    "StaticParams",
    "PriorConfig",
    "FrameConfig",
    "LatentPath",
    "Frame",
    "sample_cn",
    "log_cn",
    "sample_static_prior",
    "jakes_step",
    "apply_relay",
    "simulate_frame",
    "log_obs_density",
    "log_static_prior",
    "log_static_prior_vector",
    "log_joint_density",
]

_LOG_PI = math.log(math.pi)


def sample_cn(rng: np.random.Generator, var: float, size=None):
    """Draw circularly-symmetric complex Gaussian CN(0, var) samples."""
    if var < 0:
        raise ValueError(f"variance must be >= 0, got {var}")
    s = math.sqrt(var / 2.0)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def log_cn(x, mean, var):
    """Log density of CN(mean, var) at x; broadcasts over array arguments."""
    d = np.asarray(x) - mean
    return -(_LOG_PI + np.log(var)) - (d.real * d.real + d.imag * d.imag) / var


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseConfig:
    """Noise and channel variances; channel stages are unit power by default."""

    sigma2_w: float
    sigma2_v: float
    sigma2_h: float = 1.0
    sigma2_g: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_w", "sigma2_v", "sigma2_h", "sigma2_g"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and > 0, got {val}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseConfig":
        """Equal relay/destination noise with SNR_dB = -10*log10(sigma2)."""
        sigma2 = 10.0 ** (-snr_db / 10.0)
        return cls(sigma2_w=sigma2, sigma2_v=sigma2)


@dataclass(frozen=True)
class RelayFunction:
    """Memoryless relay map applied per symbol to the relay input r = s*h + w."""

    kind: str = "identity"
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "amplify-forward"):
            raise ValueError(f"unknown relay kind {self.kind!r}")
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"relay gain must be finite and > 0, got {self.gain}")

    @classmethod
    def identity(cls) -> "RelayFunction":
        return cls("identity", 1.0)

    @classmethod
    def amplify_forward(cls, gain: float) -> "RelayFunction":
        return cls("amplify-forward", float(gain))

    @classmethod
    def power_normalized(cls, noise: NoiseConfig, pilot_power: float = 1.0) -> "RelayFunction":
        """AF gain sqrt(1 / (sigma2_h * |s|^2 + sigma2_w)): unit mean transmit power."""
        return cls.amplify_forward(math.sqrt(1.0 / (noise.sigma2_h * pilot_power + noise.sigma2_w)))

    def apply(self, r):
        if self.kind == "identity":
            return r
        return self.gain * r


def apply_relay(f: RelayFunction, r):
    """Apply the memoryless relay function element-wise to r."""
    return f.apply(r)


@dataclass(frozen=True)
class StaticParams:
    """Per-relay AR(1) coefficients for the two channel stages.

    ``alpha[l]`` drives the source-relay stage ``h``, ``beta[l]`` the
    relay-destination stage ``g``.  Stationarity requires every entry to lie
    strictly inside (0, 1).
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise ValueError("alpha and beta must be 1-d vectors of equal length")
        for name, arr in (("alpha", alpha), ("beta", beta)):
            if not np.all((arr > 0.0) & (arr < 1.0)):
                raise ValueError(f"{name} entries must lie strictly inside (0, 1), got {arr}")
        object.__setattr__(self, "alpha", _readonly(alpha))
        object.__setattr__(self, "beta", _readonly(beta))

    @property
    def n_relays(self) -> int:
        return self.alpha.shape[0]

    def as_vector(self) -> np.ndarray:
        """Flatten to [alpha_1, ..., alpha_L, beta_1, ..., beta_L]."""
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "StaticParams":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.size % 2:
            raise ValueError("parameter vector must have even length")
        half = vec.size // 2
        return cls(alpha=vec[:half], beta=vec[half:])


@dataclass(frozen=True)
class PriorConfig:
    """Beta prior shapes shared by all relays: alpha ~ Be(a, b), beta ~ Be(c, d)."""

    a: float = 10.0
    b: float = 0.6
    c: float = 10.0
    d: float = 0.6

    def __post_init__(self):
        for name in "abcd":
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"prior shape {name} must be finite and > 0, got {val}")


@dataclass(frozen=True)
class FrameConfig:
    """Shape of one transmission frame: T pilot symbols over L parallel relays."""

    n_symbols: int
    n_relays: int
    pilots: np.ndarray
    snr_db: float

    def __post_init__(self):
        if self.n_symbols < 2:
            raise ValueError(f"n_symbols must be >= 2, got {self.n_symbols}")
        if self.n_relays < 1:
            raise ValueError(f"n_relays must be >= 1, got {self.n_relays}")
        pilots = np.asarray(self.pilots, dtype=complex)
        if pilots.shape != (self.n_symbols,):
            raise ValueError("pilots must be a length-n_symbols sequence")
        if np.any(pilots == 0) or not np.all(np.isfinite(pilots.real) & np.isfinite(pilots.imag)):
            raise ValueError("pilots must be finite and nonzero")
        object.__setattr__(self, "pilots", _readonly(pilots))

    @classmethod
    def with_unit_pilots(cls, n_symbols: int, n_relays: int = 1, snr_db: float = 15.0) -> "FrameConfig":
        return cls(n_symbols, n_relays, np.ones(n_symbols, dtype=complex), snr_db)


@dataclass(frozen=True)
class LatentPath:
    """Per-relay latent trajectories: channel stages h, g and relay noise w, each (L, T)."""

    h: np.ndarray
    g: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        arrays = {}
        shape = None
        for name in ("h", "g", "w"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-d (n_relays, n_symbols) array")
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError("h, g, w must share one (n_relays, n_symbols) shape")
            if not np.all(np.isfinite(arr.real) & np.isfinite(arr.imag)):
                raise ValueError(f"{name} contains non-finite entries")
            arrays[name] = _readonly(arr)
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.h.shape


@dataclass(frozen=True)
class Frame:
    """One observed frame; ground truth is retained only when simulated."""

    y: np.ndarray
    config: FrameConfig
    truth_params: Optional[StaticParams] = None
    truth_path: Optional[LatentPath] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex)
        expected = (self.config.n_relays, self.config.n_symbols)
        if y.shape != expected:
            raise ValueError(f"y must have shape {expected}, got {y.shape}")
        if not np.all(np.isfinite(y.real) & np.isfinite(y.imag)):
            raise ValueError("y contains non-finite entries")
        object.__setattr__(self, "y", _readonly(y))
        if (self.truth_params is None) != (self.truth_path is None):
            raise ValueError("truth_params and truth_path must be supplied together")

    @property
    def has_truth(self) -> bool:
        return self.truth_params is not None


def sample_static_prior(prior: PriorConfig, n_relays: int, rng: np.random.Generator) -> StaticParams:
    """Draw per-relay (alpha, beta) pairs independently from the Beta priors.

    Draws that underflow to exactly 0 or 1 are rejected and re-drawn so the
    result always lies in the open interval.
    """

    def draw(a, b):
        out = rng.beta(a, b, size=n_relays)
        while np.any((out <= 0.0) | (out >= 1.0)):
            bad = (out <= 0.0) | (out >= 1.0)
            out[bad] = rng.beta(a, b, size=int(bad.sum()))
        return out

    return StaticParams(alpha=draw(prior.a, prior.b), beta=draw(prior.c, prior.d))


def jakes_step(prev, coeff: float, innovation):
    """One Gauss-Markov channel step: coeff*prev + sqrt(1 - coeff^2)*innovation.

    With unit-variance CN innovations this preserves a unit stationary
    variance for any coeff in (0, 1).
    """
    if not 0.0 < coeff < 1.0:
        raise ValueError(f"AR coefficient must lie strictly inside (0, 1), got {coeff}")
    return coeff * prev + math.sqrt(1.0 - coeff * coeff) * innovation


def simulate_frame(
    params: StaticParams,
    cfg: FrameConfig,
    noise: NoiseConfig,
    relay: RelayFunction,
    rng: np.random.Generator,
) -> Frame:
    """Generate one frame from the full generative model, retaining the truth.

    Initial channel states are drawn from their stationary distributions
    CN(0, sigma2_h) and CN(0, sigma2_g); later states follow the Gauss-Markov
    recursions with innovations scaled to preserve those variances.
    """
    if params.n_relays != cfg.n_relays:
        raise ValueError("params and frame config disagree on the number of relays")
    L, T = cfg.n_relays, cfg.n_symbols
    innov_h = sample_cn(rng, noise.sigma2_h, (L, T))
    innov_g = sample_cn(rng, noise.sigma2_g, (L, T))
    h = np.empty((L, T), dtype=complex)
    g = np.empty((L, T), dtype=complex)
    h[:, 0] = innov_h[:, 0]
    g[:, 0] = innov_g[:, 0]
    scale_h = np.sqrt(1.0 - params.alpha**2)
    scale_g = np.sqrt(1.0 - params.beta**2)
    for t in range(1, T):
        h[:, t] = params.alpha * h[:, t - 1] + scale_h * innov_h[:, t]
        g[:, t] = params.beta * g[:, t - 1] + scale_g * innov_g[:, t]
    w = sample_cn(rng, noise.sigma2_w, (L, T))
    v = sample_cn(rng, noise.sigma2_v, (L, T))
    y = relay.apply(cfg.pilots[None, :] * h + w) * g + v
    return Frame(y=y, config=cfg, truth_params=params, truth_path=LatentPath(h=h, g=g, w=w))


def log_obs_density(y, h, g, w, s, relay: RelayFunction, sigma2_v: float):
    """Log CN density of the destination observation given all latent values."""
    if not (math.isfinite(sigma2_v) and sigma2_v > 0):
        raise ValueError(f"sigma2_v must be finite and > 0, got {sigma2_v}")
    for val in (y, h, g, w, s):
        arr = np.asarray(val)
        if not np.all(np.isfinite(arr.real) & np.isfinite(arr.imag)):
            raise ValueError("invalid density argument: non-finite input")
    return log_cn(y, relay.apply(np.asarray(s) * h + w) * g, sigma2_v)


def log_static_prior_vector(vec: np.ndarray, n_relays: int, prior: PriorConfig) -> float:
    """Beta log prior of a flat [alpha..., beta...] vector; -inf outside (0, 1)."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (2 * n_relays,):
        raise ValueError(f"expected a vector of length {2 * n_relays}, got shape {vec.shape}")
    if np.any((vec <= 0.0) | (vec >= 1.0)):
        return -np.inf
    alpha, beta = vec[:n_relays], vec[n_relays:]
    total = stats.beta.logpdf(alpha, prior.a, prior.b).sum()
    total += stats.beta.logpdf(beta, prior.c, prior.d).sum()
    return float(total)


def log_static_prior(params: StaticParams, prior: PriorConfig) -> float:
    """Sum of Beta log densities over all relays' (alpha, beta) coefficients."""
    return log_static_prior_vector(params.as_vector(), params.n_relays, prior)


def _gauss_markov_node_terms(x, coeffs, stationary_var, lo: int, hi: int):
    """Sum of log transition terms for nodes lo..hi-1 of a Gauss-Markov chain.

    Node 0 contributes the stationary prior, node t >= 1 the conditional
    CN(coeff * x[t-1], (1 - coeff^2) * stationary_var).
    """
    coeffs = np.asarray(coeffs, dtype=float)[:, None]
    total = 0.0
    if lo == 0:
        total += float(log_cn(x[:, 0], 0.0, stationary_var).sum())
        lo = 1
    if lo < hi:
        trans_var = (1.0 - coeffs**2) * stationary_var
        total += float(log_cn(x[:, lo:hi], coeffs * x[:, lo - 1 : hi - 1], trans_var).sum())
    return total


def log_joint_density(
    params: StaticParams,
    path: LatentPath,
    frame: Frame,
    noise: NoiseConfig,
    relay: RelayFunction,
    prior: PriorConfig,
) -> float:
    """Full augmented posterior log density (up to the evidence constant).

    Sums the static prior, both Gauss-Markov chain densities, the iid relay
    noise prior and every observation term.  Returns -inf when the static
    parameters fall outside their support.
    """
    lp = log_static_prior(params, prior)
    if not np.isfinite(lp):
        return -np.inf
    T = frame.config.n_symbols
    total = lp
    total += _gauss_markov_node_terms(path.h, params.alpha, noise.sigma2_h, 0, T)
    total += _gauss_markov_node_terms(path.g, params.beta, noise.sigma2_g, 0, T)
    total += float(log_cn(path.w, 0.0, noise.sigma2_w).sum())
    s = frame.config.pilots[None, :]
    total += float(log_cn(frame.y, relay.apply(s * path.h + path.w) * path.g, noise.sigma2_v).sum())
    return total
