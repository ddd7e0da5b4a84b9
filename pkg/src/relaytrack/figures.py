"""Figure rendering for the CLI report path.

Every writer takes in-memory results, renders one matplotlib figure to a
file next to the delimited output, and returns the written path.  The
samplers and harness stay figure-free; only the CLI (or the user) calls in
here.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_acceptance_vs_particles",
    "plot_mse_vs_snr",
    "plot_parameter_trace",
    "plot_bcrlb_curve",
    "plot_estimate_bands",
    "render_sweep_figures",
]


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_acceptance_vs_particles(acceptance_by_n: dict, path) -> Path:
    """Mean chain acceptance rate against the particle count (log x)."""
    ns = sorted(int(n) for n in acceptance_by_n)
    rates = [acceptance_by_n[str(n)] if str(n) in acceptance_by_n else acceptance_by_n[n] for n in ns]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ns, rates, "o-")
    ax.set_xscale("log")
    ax.set_xlabel("particles N")
    ax.set_ylabel("mean acceptance rate")
    ax.set_title("Acceptance rate vs particle count")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_mse_vs_snr(records, path, value="mse_total") -> Path:
    """Box-whisker of per-frame MSE grouped by SNR."""
    by_snr = {}
    for rec in records:
        if not rec.error and np.isfinite(getattr(rec, value)):
            by_snr.setdefault(rec.snr_db, []).append(getattr(rec, value))
    snrs = sorted(by_snr)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([by_snr[s] for s in snrs], tick_labels=[f"{s:g}" for s in snrs])
    ax.set_yscale("log")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel(value.replace("_", " "))
    ax.set_title(f"{value.replace('_', ' ')} distribution vs SNR")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_parameter_trace(trace_array: np.ndarray, path, names=None) -> Path:
    """Sample paths of the static parameters along the chain."""
    trace_array = np.atleast_2d(np.asarray(trace_array))
    n_cols = trace_array.shape[1]
    half = n_cols // 2
    if names is None:
        names = [f"alpha_{i + 1}" for i in range(half)] + [f"beta_{i + 1}" for i in range(half)]
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(n_cols):
        ax.plot(trace_array[:, i], lw=0.7, label=names[i])
    ax.set_xlabel("stored iteration")
    ax.set_ylabel("parameter value")
    ax.set_title("Chain sample paths")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_bcrlb_curve(trace_inv: np.ndarray, path, trace_raw=None) -> Path:
    """Per-symbol MSE lower bound along the frame."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(trace_inv) + 1), trace_inv, label="trace(J_t^{-1})")
    if trace_raw is not None:
        ax2 = ax.twinx()
        ax2.plot(np.arange(1, len(trace_raw) + 1), trace_raw, "C1--", lw=0.8, label="trace(J_t)")
        ax2.set_ylabel("trace(J_t)")
    ax.set_xlabel("symbol t")
    ax.set_ylabel("MSE lower bound")
    ax.set_title("Recursive state-MSE lower bound")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_estimate_bands(summary, path, truth=None, component="h", relay=0) -> Path:
    """Posterior mean with credible band for one channel trajectory."""
    mean = getattr(summary.mmse_path, component)[relay]
    lo = getattr(summary.ci_lower, component)[relay]
    hi = getattr(summary.ci_upper, component)[relay]
    t = np.arange(1, mean.shape[0] + 1)
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for ax, part, label in ((axes[0], np.real, "Re"), (axes[1], np.imag, "Im")):
        ax.plot(t, part(mean), "C0", label="posterior mean")
        ax.fill_between(t, part(lo), part(hi), color="C0", alpha=0.2, label=f"{summary.ci_level:.0%} band")
        if truth is not None:
            ax.plot(t, part(getattr(truth, component)[relay]), "C2", lw=0.9, label="truth")
        ax.set_ylabel(f"{label}({component})")
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].set_xlabel("symbol t")
    axes[0].set_title(f"Channel {component} estimate (relay {relay + 1})")
    return _finish(fig, path)


def render_sweep_figures(result, directory) -> list:
    """Render the standard sweep report figures into directory/figures/."""
    from .harness import build_summary

    directory = Path(directory)
    figdir = directory / "figures"
    summary = build_summary(result.records)
    written = []
    if len(summary["acceptance_by_n"]) > 1:
        written.append(plot_acceptance_vs_particles(summary["acceptance_by_n"], figdir / "acceptance_vs_n.png"))
    snrs = {r.snr_db for r in result.records if not r.error}
    if len(snrs) > 1:
        written.append(plot_mse_vs_snr(result.records, figdir / "mse_vs_snr.png"))
        for value in ("mmse_alpha", "mmse_beta"):
            by_snr = {}
            for rec in result.records:
                if not rec.error:
                    by_snr.setdefault(rec.snr_db, []).append(getattr(rec, value))
            fig, ax = plt.subplots(figsize=(6, 4))
            keys = sorted(by_snr)
            ax.boxplot([by_snr[s] for s in keys], tick_labels=[f"{s:g}" for s in keys])
            ax.set_xlabel("SNR (dB)")
            ax.set_ylabel(value)
            ax.set_title(f"{value} over frames vs SNR")
            ax.grid(True, alpha=0.3)
            written.append(_finish(fig, figdir / f"{value}_vs_snr.png"))
    if result.traces:
        pid, arr = next(iter(sorted(result.traces.items())))
        if arr.size:
            written.append(plot_parameter_trace(arr, figdir / f"trace_{pid}.png"))
    return written
