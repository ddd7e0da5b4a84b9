"""Recursive Bayesian Cramer-Rao lower bound for the latent states.

The per-relay Fisher information over the state vector [h, g, w] obeys the
standard additive-Gaussian recursion

    J_t = D22 - D21 (J_{t-1} + D11)^{-1} D12

with closed-form D matrices for the unit-power channel model and a known
pilot.  ``trace(J_t^{-1})`` lower-bounds the total mean square error of any
estimator of (h_t, g_t, w_t); averaging over time and summing over relays
gives the reported per-symbol bound.  Uncertainty in the AR coefficients is
marginalized by evaluating the bound at posterior draws of (alpha, beta)
taken from a sampler trace, which costs nothing beyond the recursion itself.

Caveats kept on purpose: the default Be(10, 0.6) prior places unbounded
density at the right boundary, while the regularity conditions behind the
bound ask the prior to vanish there; the bound is computed regardless.  The
(w, w) information entry carries a verbatim additive +1 term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import NoiseConfig, StaticParams

__all__ = [
    "FimState",
    "DMatrices",
    "BoundSummary",
    "d_matrices",
    "fim_init",
    "fim_step",
    "bcrlb_curves",
    "bcrlb_trace",
    "marginalized_bcrlb",
]

_SYM_TOL = 1e-12


@dataclass(frozen=True)
class FimState:
    """Bayesian Fisher information matrix for one relay's [h, g, w] state."""

    J: np.ndarray
    t: int = 1

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape != (3, 3):
            raise ValueError(f"J must be 3x3, got {J.shape}")
        if not np.allclose(J, J.T, atol=_SYM_TOL):
            raise ValueError("J must be symmetric")
        object.__setattr__(self, "J", J)


@dataclass(frozen=True)
class DMatrices:
    """Blocks of the information recursion; D12 and D21 coincide."""

    d11: np.ndarray
    d12: np.ndarray
    d21: np.ndarray
    d22: np.ndarray

    def __post_init__(self):
        for name in ("d11", "d12", "d21", "d22"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            object.__setattr__(self, name, arr)
        if not np.array_equal(self.d12, self.d21):
            raise ValueError("d12 and d21 must be equal")


def d_matrices(alpha: float, beta: float, noise: NoiseConfig, s: complex = 1.0) -> DMatrices:
    """Closed-form information blocks for one relay at fixed (alpha, beta).

    The pilot enters through its magnitude and its real part (unit pilots in
    practice).  Raises for AR coefficients at the stationarity boundary.
    """
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ValueError(f"nonstationary parameters: alpha={alpha}, beta={beta}")
    s = complex(s)
    s_mag2 = abs(s) ** 2
    s_re = s.real
    ia = 1.0 / (1.0 - alpha * alpha)
    ib = 1.0 / (1.0 - beta * beta)
    sv = noise.sigma2_v
    sw = noise.sigma2_w
    d11 = np.diag([alpha * alpha * ia, beta * beta * ib, 0.0])
    d12 = np.diag([alpha * ia, beta * ib, 0.0])
    d22 = np.array(
        [
            [ia + s_mag2 / sv, 0.0, s_re / sv],
            [0.0, ib + (s_mag2 + sw) / sv, 0.0],
            [s_re / sv, 0.0, 1.0 / sw + 1.0],
        ]
    )
    return DMatrices(d11=d11, d12=d12, d21=d12.copy(), d22=d22)


def fim_init(noise: NoiseConfig) -> FimState:
    """Information of the stationary priors: diag(1/s2_h, 1/s2_g, 1/s2_w)."""
    return FimState(np.diag([1.0 / noise.sigma2_h, 1.0 / noise.sigma2_g, 1.0 / noise.sigma2_w]), t=1)


def fim_step(prev: FimState, d: DMatrices) -> FimState:
    """Advance the information recursion one symbol; output symmetrized."""
    m = prev.J + d.d11
    try:
        inner = np.linalg.solve(m, d.d12)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular information matrix") from exc
    j = d.d22 - d.d21 @ inner
    return FimState(0.5 * (j + j.T), t=prev.t + 1)


def bcrlb_curves(params: StaticParams, noise: NoiseConfig, s: complex, n_symbols: int):
    """Per-symbol bound curves summed over relays.

    Returns (trace_inv, trace_raw): trace_inv[t] = sum_l trace(J_t^{-1}) is
    the MSE lower bound; trace_raw[t] = sum_l trace(J_t) is exported for
    completeness.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    trace_inv = np.zeros(n_symbols)
    trace_raw = np.zeros(n_symbols)
    for l in range(params.n_relays):
        d = d_matrices(float(params.alpha[l]), float(params.beta[l]), noise, s)
        fim = fim_init(noise)
        for t in range(n_symbols):
            if t > 0:
                fim = fim_step(fim, d)
            trace_inv[t] += float(np.trace(np.linalg.inv(fim.J)))
            trace_raw[t] += float(np.trace(fim.J))
    return trace_inv, trace_raw


def bcrlb_trace(params: StaticParams, noise: NoiseConfig, s: complex, n_symbols: int) -> float:
    """Time-averaged per-symbol lower bound on total state MSE, summed over relays."""
    trace_inv, _ = bcrlb_curves(params, noise, s, n_symbols)
    return float(trace_inv.mean())


@dataclass(frozen=True)
class BoundSummary:
    """Monte Carlo summary of the bound over posterior parameter draws."""

    mean: float
    std: float
    quantiles: dict
    values: np.ndarray


def marginalized_bcrlb(
    trace_draws: Sequence[StaticParams] | Iterable[StaticParams],
    noise: NoiseConfig,
    s: complex,
    n_symbols: int,
    quantile_levels=(0.05, 0.25, 0.5, 0.75, 0.95),
) -> BoundSummary:
    """Marginalize parameter uncertainty by averaging the bound over draws.

    ``trace_draws`` are post-burnin static-parameter draws from a sampler
    trace; the bound is evaluated at each and summarized.
    """
    draws = list(trace_draws)
    if not draws:
        raise ValueError("trace_draws must be non-empty")
    values = np.array([bcrlb_trace(p, noise, s, n_symbols) for p in draws])
    quantiles = {q: float(np.quantile(values, q)) for q in quantile_levels}
    return BoundSummary(
        mean=float(values.mean()),
        std=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        quantiles=quantiles,
        values=values,
    )
