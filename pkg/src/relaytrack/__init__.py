"""Channel tracking and static-parameter estimation for dual-hop relay networks.

The package simulates frames of pilot symbols traversing amplify-and-forward
relay paths with Gauss-Markov fading on both hops, and estimates the latent
channel trajectories jointly with the fading AR coefficients by adaptive
particle marginal Metropolis-Hastings (with a blocked Gibbs baseline).  A
recursive Bayesian information recursion provides a per-symbol lower bound on
the achievable state MSE, and a batch harness sweeps particle count, frame
length and SNR while persisting CSV/JSON metrics and report figures.
"""

from ._version import __version__
from .model import (
    Frame,
    FrameConfig,
    LatentPath,
    NoiseConfig,
    PriorConfig,
    RelayFunction,
    StaticParams,
    sample_static_prior,
    simulate_frame,
)
from .filtering import FilterOutput, run_rbsir
from .samplers import ChainTrace, GibbsConfig, SamplerConfig, run_gibbs, run_pmcmc
from .bcrlb import bcrlb_trace, marginalized_bcrlb
from .harness import (
    ExperimentConfig,
    MetricsRecord,
    emit_results,
    run_sweep,
    summarize_chain,
)

__all__ = [
    "__version__",
    "Frame",
    "FrameConfig",
    "LatentPath",
    "NoiseConfig",
    "PriorConfig",
    "RelayFunction",
    "StaticParams",
    "sample_static_prior",
    "simulate_frame",
    "FilterOutput",
    "run_rbsir",
    "ChainTrace",
    "GibbsConfig",
    "SamplerConfig",
    "run_gibbs",
    "run_pmcmc",
    "bcrlb_trace",
    "marginalized_bcrlb",
    "ExperimentConfig",
    "MetricsRecord",
    "emit_results",
    "run_sweep",
    "summarize_chain",
]
