"""Experiment orchestration: sweeps, summaries, metrics and persistence.

A sweep runs the configured sampler(s) over a grid of (particle count, frame
length, SNR) points with several independently simulated frames per point,
then records acceptance statistics, posterior-mean estimation errors,
credible intervals, the marginalized state-MSE lower bound and wall-clock
time per point.

Reproducibility: every grid task derives its own generator seed from the
master seed and the point coordinates through SHA-256 (see
:func:`derive_seed`), so points are independently reproducible, can run out
of order or in a process pool, and a repeated run emits a byte-identical
``metrics.csv``.  Wall-clock times are inherently nondeterministic and go to
a separate ``timings.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._version import __version__
from .bcrlb import marginalized_bcrlb
from .model import (
    Frame,
    FrameConfig,
    LatentPath,
    NoiseConfig,
    PriorConfig,
    RelayFunction,
    StaticParams,
    simulate_frame,
)
from .samplers import ChainTrace, GibbsConfig, SamplerConfig, run_gibbs, run_pmcmc

__all__ = [
    "derive_seed",
    "derive_rng",
    "ChainSettings",
    "ExperimentConfig",
    "MetricsRecord",
    "EstimateSummary",
    "SweepResult",
    "summarize_chain",
    "mse_against_truth",
    "run_sweep",
    "emit_results",
    "adpmcmc_ops_per_iteration",
    "gibbs_ops_per_iteration",
    "matched_gibbs_iterations",
    "BenchmarkResult",
    "benchmark_cost",
    "METRICS_COLUMNS",
]


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a 64-bit substream seed from the master seed and a key tuple.

    The key is the '|'-joined string of the master seed and every part,
    hashed with SHA-256; the first 8 bytes give the seed.  Stable across
    runs, platforms and Python versions.
    """
    key = "|".join(str(p) for p in (master_seed, *parts))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *parts))


@dataclass(frozen=True)
class ChainSettings:
    iterations: int = 5000
    burnin: int = 1500
    thin: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid definition plus everything needed to reproduce a sweep."""

    n_values: tuple = (100,)
    t_values: tuple = (100,)
    snr_db_values: tuple = (0.0, 15.0, 25.0)
    frames_per_point: int = 20
    chain: ChainSettings = field(default_factory=ChainSettings)
    seed: int = 0
    sampler: str = "adpmcmc"  # adpmcmc | gibbs | both
    output_dir: str = "results"
    n_relays: int = 1
    truth_alpha: float = 0.95
    truth_beta: float = 0.95
    prior: PriorConfig = field(default_factory=PriorConfig)
    ci_level: float = 0.95
    bcrlb_draws: int = 200
    trace_rows: int = 2000
    workers: int = 1
    gibbs_cost_multiplier: float = 1.0
    gibbs_block_length: int = 10

    def __post_init__(self):
        for name in ("n_values", "t_values", "snr_db_values"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)
        if self.frames_per_point < 1:
            raise ValueError("frames_per_point must be >= 1")
        if self.sampler not in ("adpmcmc", "gibbs", "both"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    def samplers(self):
        return ("adpmcmc", "gibbs") if self.sampler == "both" else (self.sampler,)


@dataclass
class MetricsRecord:
    """One grid point summary; ``error`` is non-empty when the point failed."""

    sampler: str
    n_particles: int
    n_symbols: int
    snr_db: float
    frame_index: int
    seed: int
    acceptance_rate: float = math.nan
    mmse_alpha: float = math.nan
    mmse_beta: float = math.nan
    ci90_alpha_lo: float = math.nan
    ci90_alpha_hi: float = math.nan
    mse_h: float = math.nan
    mse_g: float = math.nan
    mse_total: float = math.nan
    bcrlb_mean: float = math.nan
    wall_clock_s: float = math.nan
    error: str = ""

    @property
    def point_id(self) -> str:
        return (
            f"N{self.n_particles}_T{self.n_symbols}_SNR{self.snr_db:g}"
            f"_F{self.frame_index}_{self.sampler}"
        )

    def sort_key(self):
        return (self.sampler, self.n_particles, self.n_symbols, self.snr_db, self.frame_index)


METRICS_COLUMNS = [
    "sampler",
    "n_particles",
    "n_symbols",
    "snr_db",
    "frame_index",
    "seed",
    "acceptance_rate",
    "mmse_alpha",
    "mmse_beta",
    "ci90_alpha_lo",
    "ci90_alpha_hi",
    "mse_h",
    "mse_g",
    "mse_total",
    "bcrlb_mean",
    "error",
]


@dataclass(frozen=True)
class EstimateSummary:
    """Posterior means and per-coordinate quantile bands over a chain trace.

    Path bands are computed separately for real and imaginary parts and
    stored as complex arrays (lower band = lower real quantile + 1j * lower
    imaginary quantile).
    """

    mmse_path: LatentPath
    ci_lower: LatentPath
    ci_upper: LatentPath
    mmse_params: StaticParams
    ci_level: float


def _align_draws(hs, gs, ws, reference: LatentPath):
    """Rotate each draw along the unidentifiable phase orbit toward a reference.

    The observation y = relay(s*h + w)*g + v is exactly invariant under
    (h, w) -> e^{i phi}(h, w), g -> e^{-i phi} g per relay, so posterior path
    draws carry an arbitrary global phase and their plain average collapses
    toward zero.  Each draw is rotated by the least-squares optimal phase
    against the reference before averaging.
    """
    a = (np.conj(reference.h)[None] * hs).sum(axis=2)
    a += (np.conj(reference.w)[None] * ws).sum(axis=2)
    b = (np.conj(reference.g)[None] * gs).sum(axis=2)
    phi = np.arctan2((b - a).imag, (a + b).real)
    rot = np.exp(1j * phi)[:, :, None]
    return hs * rot, gs * np.conj(rot), ws * rot


def summarize_chain(
    trace: ChainTrace,
    burnin: int,
    ci_level: float = 0.95,
    align_to: Optional[LatentPath] = None,
) -> EstimateSummary:
    """Posterior means and equal-tailed quantile bands over post-burnin states.

    ``align_to`` rotates every stored draw along the per-relay phase orbit
    (see :func:`_align_draws`) toward the given reference before summarizing;
    without it the path means estimate the exact, phase-symmetric posterior
    mean, which is near zero by symmetry.
    """
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    start = math.ceil(burnin / trace.thin)
    states = trace.states[start:]
    if not states:
        raise ValueError("no post-burnin states: trace shorter than burnin")
    lo_q, hi_q = (1.0 - ci_level) / 2.0, 1.0 - (1.0 - ci_level) / 2.0

    stacks = {name: np.stack([getattr(s.path, name) for s in states]) for name in ("h", "g", "w")}
    if align_to is not None:
        stacks["h"], stacks["g"], stacks["w"] = _align_draws(
            stacks["h"], stacks["g"], stacks["w"], align_to
        )
    mean = {}
    lower = {}
    upper = {}
    for name, arr in stacks.items():
        mean[name] = arr.mean(axis=0)
        lower[name] = np.quantile(arr.real, lo_q, axis=0) + 1j * np.quantile(arr.imag, lo_q, axis=0)
        upper[name] = np.quantile(arr.real, hi_q, axis=0) + 1j * np.quantile(arr.imag, hi_q, axis=0)
    params = np.stack([s.params.as_vector() for s in states])
    return EstimateSummary(
        mmse_path=LatentPath(**mean),
        ci_lower=LatentPath(**lower),
        ci_upper=LatentPath(**upper),
        mmse_params=StaticParams.from_vector(params.mean(axis=0)),
        ci_level=ci_level,
    )


def mse_against_truth(summary: EstimateSummary, truth: LatentPath):
    """Mean squared complex error of the posterior-mean paths against truth.

    Returns (mse_h, mse_g, mse_total) with mse_total = mse_h + mse_g,
    averaging |estimate - truth|^2 over symbols and relays.
    """
    if summary.mmse_path.shape != truth.shape:
        raise ValueError("estimate and truth shapes differ")
    mse_h = float(np.mean(np.abs(summary.mmse_path.h - truth.h) ** 2))
    mse_g = float(np.mean(np.abs(summary.mmse_path.g - truth.g) ** 2))
    return mse_h, mse_g, mse_h + mse_g


# ---------------------------------------------------------------------------
# Operation-count model used for compute-matched sampler comparisons
# ---------------------------------------------------------------------------


def adpmcmc_ops_per_iteration(n_particles: int, n_symbols: int, n_relays: int) -> int:
    """Dominant operation count of one AdPMCMC iteration."""
    N, T, L = n_particles, n_symbols, n_relays
    return 2 * L * L + T * L + N * T * (2 * L + 2) + N


def gibbs_ops_per_iteration(n_symbols: int, n_relays: int) -> int:
    """Dominant operation count of one deterministic-scan Gibbs iteration."""
    T, L = n_symbols, n_relays
    return 6 * T * T * L * L + 10 * T * L + 4 * L


def matched_gibbs_iterations(
    pmcmc_iterations: int,
    n_particles: int,
    n_symbols: int,
    n_relays: int,
    multiplier: float = 1.0,
) -> int:
    """Gibbs chain length matching the AdPMCMC operation budget (times multiplier)."""
    ratio = adpmcmc_ops_per_iteration(n_particles, n_symbols, n_relays) / gibbs_ops_per_iteration(
        n_symbols, n_relays
    )
    return max(int(round(pmcmc_iterations * ratio * multiplier)), 10)


def _gibbs_block_length(n_symbols: int, preferred: int) -> int:
    for tau in range(min(preferred, n_symbols), 0, -1):
        if n_symbols % tau == 0:
            return tau
    return 1


# ---------------------------------------------------------------------------
# Sweep execution
# ---------------------------------------------------------------------------


def _run_point(cfg: ExperimentConfig, sampler: str, n: int, t: int, snr_db: float, frame_index: int):
    """Run one grid task; returns (MetricsRecord, (point_id, trace array))."""
    seed = derive_seed(cfg.seed, sampler, n, t, snr_db, frame_index)
    record = MetricsRecord(
        sampler=sampler, n_particles=n, n_symbols=t, snr_db=snr_db, frame_index=frame_index, seed=seed
    )
    try:
        rng = np.random.default_rng(seed)
        noise = NoiseConfig.from_snr_db(snr_db)
        relay = RelayFunction.power_normalized(noise)
        truth = StaticParams(
            alpha=np.full(cfg.n_relays, cfg.truth_alpha), beta=np.full(cfg.n_relays, cfg.truth_beta)
        )
        frame = simulate_frame(truth, FrameConfig.with_unit_pilots(t, cfg.n_relays, snr_db), noise, relay, rng)

        start = time.perf_counter()
        if sampler == "adpmcmc":
            chain_cfg = SamplerConfig(
                iterations=cfg.chain.iterations,
                burnin=cfg.chain.burnin,
                n_particles=n,
                thin=cfg.chain.thin,
                prior=cfg.prior,
                noise=noise,
                relay=relay,
            )
            trace = run_pmcmc(frame, chain_cfg, rng)
            burnin = cfg.chain.burnin
        else:
            iterations = matched_gibbs_iterations(
                cfg.chain.iterations, n, t, cfg.n_relays, cfg.gibbs_cost_multiplier
            )
            burnin = max(1, int(round(iterations * cfg.chain.burnin / cfg.chain.iterations)))
            gibbs_cfg = GibbsConfig(
                iterations=iterations,
                burnin=burnin,
                block_length=_gibbs_block_length(t, cfg.gibbs_block_length),
                thin=cfg.chain.thin,
                prior=cfg.prior,
                noise=noise,
                relay=relay,
            )
            trace = run_gibbs(frame, gibbs_cfg, rng)
        record.wall_clock_s = time.perf_counter() - start
        record.acceptance_rate = trace.acceptance_rate

        # Align draws to the simulated truth: the per-relay phase is not
        # identifiable, so tracking error is measured modulo the phase orbit.
        summary = summarize_chain(trace, burnin, cfg.ci_level, align_to=frame.truth_path)
        record.mse_h, record.mse_g, record.mse_total = mse_against_truth(summary, frame.truth_path)
        record.mmse_alpha = float(summary.mmse_params.alpha[0])
        record.mmse_beta = float(summary.mmse_params.beta[0])

        draws = trace.param_draws(post_burnin=True)
        alpha0 = draws[:, 0]
        record.ci90_alpha_lo = float(np.quantile(alpha0, 0.05))
        record.ci90_alpha_hi = float(np.quantile(alpha0, 0.95))

        step = max(1, len(draws) // cfg.bcrlb_draws)
        bound_params = [StaticParams.from_vector(v) for v in draws[::step][: cfg.bcrlb_draws]]
        record.bcrlb_mean = marginalized_bcrlb(bound_params, noise, 1.0 + 0.0j, t).mean

        full = trace.param_draws(post_burnin=False)
        keep = max(1, len(full) // cfg.trace_rows)
        trace_array = full[::keep]
    except Exception as exc:  # keep the sweep alive; the record carries the failure
        record.error = f"{type(exc).__name__}: {exc}"
        trace_array = np.empty((0, 2 * cfg.n_relays))
    return record, (record.point_id, trace_array)


def _run_point_star(args):
    return _run_point(*args)


@dataclass
class SweepResult:
    records: list
    traces: dict
    config: ExperimentConfig


def run_sweep(cfg: ExperimentConfig, progress=None) -> SweepResult:
    """Execute every grid task, serially or in a process pool.

    Results are merged in sorted point order regardless of execution order,
    so the output is deterministic for a fixed config and seed.
    """
    tasks = [
        (cfg, sampler, n, t, snr, f)
        for sampler in cfg.samplers()
        for n in cfg.n_values
        for t in cfg.t_values
        for snr in cfg.snr_db_values
        for f in range(cfg.frames_per_point)
    ]
    outputs = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for i, out in enumerate(pool.map(_run_point_star, tasks)):
                outputs.append(out)
                if progress is not None:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            outputs.append(_run_point_star(task))
            if progress is not None:
                progress(i + 1, len(tasks))
    outputs.sort(key=lambda pair: pair[0].sort_key())
    records = [rec for rec, _ in outputs]
    traces = {pid: arr for _, (pid, arr) in outputs}
    return SweepResult(records=records, traces=traces, config=cfg)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_manifest(directory, config, extra: Optional[dict] = None) -> Path:
    """Write manifest.json (resolved config + code version) and return its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        config = dataclasses.asdict(config)
    manifest = {"code_version": __version__, "config": config}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _quantile_block(values: np.ndarray) -> dict:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {k: math.nan for k in ("min", "q1", "median", "q3", "max")}
    return {
        "min": float(values.min()),
        "q1": float(np.quantile(values, 0.25)),
        "median": float(np.quantile(values, 0.5)),
        "q3": float(np.quantile(values, 0.75)),
        "max": float(values.max()),
    }


def build_summary(records: Sequence[MetricsRecord]) -> dict:
    """Per-point aggregates plus the acceptance-vs-N curve data."""
    groups = {}
    for rec in records:
        key = (rec.sampler, rec.n_particles, rec.n_symbols, rec.snr_db)
        groups.setdefault(key, []).append(rec)
    per_point = []
    for (sampler, n, t, snr), recs in sorted(groups.items()):
        ok = [r for r in recs if not r.error]
        per_point.append(
            {
                "sampler": sampler,
                "n_particles": n,
                "n_symbols": t,
                "snr_db": snr,
                "frames": len(recs),
                "failed": len(recs) - len(ok),
                "mean_acceptance": float(np.mean([r.acceptance_rate for r in ok])) if ok else math.nan,
                "mse_total": _quantile_block(np.array([r.mse_total for r in ok])),
                "mse_h": _quantile_block(np.array([r.mse_h for r in ok])),
                "mse_g": _quantile_block(np.array([r.mse_g for r in ok])),
                "mean_bcrlb": float(np.mean([r.bcrlb_mean for r in ok])) if ok else math.nan,
            }
        )
    acceptance_by_n = {}
    for rec in records:
        if not rec.error:
            acceptance_by_n.setdefault(rec.n_particles, []).append(rec.acceptance_rate)
    return {
        "per_point": per_point,
        "acceptance_by_n": {str(n): float(np.mean(v)) for n, v in sorted(acceptance_by_n.items())},
    }


def emit_results(result, directory, config=None) -> dict:
    """Write metrics.csv, timings.csv, traces/*.csv and summary.json.

    ``result`` is a SweepResult or a bare record sequence.  metrics.csv is
    deterministic for a fixed config/seed; wall-clock times go to
    timings.csv.  When a config is supplied (or present on the result),
    manifest.json is written first.  Returns {name: Path}.
    """
    if isinstance(result, SweepResult):
        records, traces = result.records, result.traces
        config = config if config is not None else result.config
    else:
        records, traces = list(result), {}
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    if config is not None:
        written["manifest"] = write_manifest(directory, config)

    metrics_path = directory / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, col)) for col in METRICS_COLUMNS])
    written["metrics"] = metrics_path

    timings_path = directory / "timings.csv"
    with open(timings_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_id", "wall_clock_s"])
        for rec in records:
            writer.writerow([rec.point_id, _fmt(rec.wall_clock_s)])
    written["timings"] = timings_path

    if traces:
        trace_dir = directory / "traces"
        trace_dir.mkdir(exist_ok=True)
        for pid, arr in traces.items():
            path = trace_dir / f"{pid}.csv"
            half = arr.shape[1] // 2 if arr.size else 0
            header = [f"alpha_{i + 1}" for i in range(half)] + [f"beta_{i + 1}" for i in range(half)]
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                for row in arr:
                    writer.writerow([_fmt(float(v)) for v in row])
        written["traces"] = trace_dir

    summary_path = directory / "summary.json"
    summary_path.write_text(json.dumps(build_summary(records), indent=2, sort_keys=True) + "\n")
    written["summary"] = summary_path
    return written


def read_metrics(path) -> list:
    """Parse a metrics.csv back into MetricsRecord objects."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                MetricsRecord(
                    sampler=row["sampler"],
                    n_particles=int(row["n_particles"]),
                    n_symbols=int(row["n_symbols"]),
                    snr_db=float(row["snr_db"]),
                    frame_index=int(row["frame_index"]),
                    seed=int(row["seed"]),
                    acceptance_rate=float(row["acceptance_rate"]),
                    mmse_alpha=float(row["mmse_alpha"]),
                    mmse_beta=float(row["mmse_beta"]),
                    ci90_alpha_lo=float(row["ci90_alpha_lo"]),
                    ci90_alpha_hi=float(row["ci90_alpha_hi"]),
                    mse_h=float(row["mse_h"]),
                    mse_g=float(row["mse_g"]),
                    mse_total=float(row["mse_total"]),
                    bcrlb_mean=float(row["bcrlb_mean"]),
                    error=row["error"],
                )
            )
    return records


# ---------------------------------------------------------------------------
# Cost benchmarking
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkResult:
    """Wall-clock per sampler iteration over an (N, T, L) grid with scaling fits."""

    rows: list  # dicts: n_particles, n_symbols, n_relays, seconds_per_iteration
    exponent_n: float
    exponent_t: float


def _time_iterations(n: int, t: int, l: int, iterations: int, seed: int, snr_db: float) -> float:
    from .samplers import AdaptiveState, ChainState, pmcmc_step, _filter_estimator
    from .model import log_static_prior_vector, sample_static_prior

    rng = derive_rng(seed, "bench", n, t, l)
    noise = NoiseConfig.from_snr_db(snr_db)
    relay = RelayFunction.power_normalized(noise)
    # Mid-support truth keeps proposals inside (0, 1), so every timed
    # iteration pays the full filter cost.
    truth = StaticParams(alpha=np.full(l, 0.5), beta=np.full(l, 0.5))
    frame = simulate_frame(truth, FrameConfig.with_unit_pilots(t, l, snr_db), noise, relay, rng)
    cfg = SamplerConfig(
        iterations=iterations, burnin=0, n_particles=n, noise=noise, relay=relay, warmup=10**9
    )
    estimator = _filter_estimator(frame, cfg)
    params = truth
    log_ml, path = estimator(params, rng)
    state = ChainState(
        params=params,
        path=path,
        log_prior=log_static_prior_vector(params.as_vector(), l, cfg.prior),
        log_marginal_likelihood=log_ml,
    )
    adapt = AdaptiveState.initial(2 * l, warmup=10**9)
    start = time.perf_counter()
    for _ in range(iterations):
        state, adapt, _ = pmcmc_step(state, adapt, frame, cfg, rng, estimator)
    return (time.perf_counter() - start) / iterations


def _fit_exponent(sizes, times) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def benchmark_cost(
    n_values: Sequence[int] = (2000, 4000, 8000),
    t_values: Sequence[int] = (100, 200, 400),
    n_relays: int = 1,
    iterations: int = 15,
    seed: int = 0,
    snr_db: float = 15.0,
    base_n: Optional[int] = None,
    base_t: Optional[int] = None,
) -> BenchmarkResult:
    """Measure per-iteration wall clock across the grid and fit log-log slopes.

    The N sweep holds T at ``base_t`` (default: smallest T) and vice versa;
    near-linear scaling shows up as fitted exponents close to 1.
    """
    base_n = base_n if base_n is not None else min(n_values)
    base_t = base_t if base_t is not None else min(t_values)
    rows = []
    n_times = []
    for n in n_values:
        dt = _time_iterations(n, base_t, n_relays, iterations, seed, snr_db)
        rows.append({"n_particles": n, "n_symbols": base_t, "n_relays": n_relays, "seconds_per_iteration": dt})
        n_times.append(dt)
    t_times = []
    for t in t_values:
        dt = _time_iterations(base_n, t, n_relays, iterations, seed, snr_db)
        rows.append({"n_particles": base_n, "n_symbols": t, "n_relays": n_relays, "seconds_per_iteration": dt})
        t_times.append(dt)
    return BenchmarkResult(
        rows=rows,
        exponent_n=_fit_exponent(n_values, n_times),
        exponent_t=_fit_exponent(t_values, t_times),
    )
