"""Command-line interface.

Subcommands: ``simulate`` (write a synthetic frame file), ``estimate`` (run
one sampler chain on a frame file), ``sweep`` (grid experiment), ``bench``
(per-iteration cost scaling) and ``bcrlb`` (standalone bound curves).

Config resolution per key: built-in default < JSON config file (``--config``)
< command-line values (``--set key=value`` first, then dedicated flags).
Every run writes ``manifest.json`` with the fully resolved configuration
before any result file.  Results go to files only; progress lines go to
stderr and ``--quiet`` silences them.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.

The default output directory comes from ``$RELAYTRACK_OUTPUT_DIR`` when set.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bcrlb as bcrlb_mod
from . import figures, framefile, harness
from ._version import __version__
from .model import (
    FrameConfig,
    NoiseConfig,
    PriorConfig,
    RelayFunction,
    StaticParams,
    simulate_frame,
)
from .samplers import GibbsConfig, SamplerConfig, run_gibbs, run_pmcmc

__all__ = ["CONFIG_SCHEMA", "CliInvocation", "parse_and_validate", "dispatch", "main"]

ENV_OUTPUT_DIR = "RELAYTRACK_OUTPUT_DIR"


def _positive(v):
    return v > 0


def _unit_open(v):
    return 0.0 < v < 1.0


@dataclass(frozen=True)
class FieldSpec:
    """One configuration key: type, default, constraint and help text."""

    name: str
    kind: str  # int | float | str | int_list | float_list | flag
    default: object
    help: str
    check: object = None
    range_text: str = ""
    choices: tuple = ()


CONFIG_SCHEMA = {
    spec.name: spec
    for spec in [
        FieldSpec("seed", "int", 0, "master seed for all random streams", lambda v: v >= 0, ">= 0"),
        FieldSpec("output_dir", "str", None, "directory for result files (env RELAYTRACK_OUTPUT_DIR)"),
        FieldSpec("t", "int_list", [100], "frame length(s) in symbols", lambda v: v >= 2, ">= 2"),
        FieldSpec("relays", "int", 1, "number of parallel relays", lambda v: v >= 1, ">= 1"),
        FieldSpec("snr_db", "float", 15.0, "signal-to-noise ratio in dB"),
        FieldSpec("snr", "float_list", [0.0, 15.0, 25.0], "sweep SNR grid in dB"),
        FieldSpec("alpha", "float", 0.95, "AR coefficient of the source-relay stage", _unit_open, "(0, 1)"),
        FieldSpec("beta", "float", 0.95, "AR coefficient of the relay-destination stage", _unit_open, "(0, 1)"),
        FieldSpec("n_particles", "int_list", [100], "particle count(s) for the filter", lambda v: v >= 2, ">= 2"),
        FieldSpec("iterations", "int", 5000, "Markov chain length", _positive, ">= 1"),
        FieldSpec("burnin", "int", 1500, "iterations discarded before summaries", lambda v: v >= 0, ">= 0"),
        FieldSpec("thin", "int", 1, "store every thin-th state", _positive, ">= 1"),
        FieldSpec("frames", "int", 20, "simulated frames per grid point", _positive, ">= 1"),
        FieldSpec("sampler", "str", "adpmcmc", "sampler to run", choices=("adpmcmc", "gibbs", "both")),
        FieldSpec("workers", "int", 1, "parallel worker processes for sweeps", _positive, ">= 1"),
        FieldSpec("prior_a", "float", 10.0, "Beta prior shape a for alpha", _positive, "> 0"),
        FieldSpec("prior_b", "float", 0.6, "Beta prior shape b for alpha", _positive, "> 0"),
        FieldSpec("prior_c", "float", 10.0, "Beta prior shape c for beta", _positive, "> 0"),
        FieldSpec("prior_d", "float", 0.6, "Beta prior shape d for beta", _positive, "> 0"),
        FieldSpec("relay", "str", "af", "relay processing function", choices=("af", "identity")),
        FieldSpec("relay_gain", "float", 0.0, "AF gain; 0 selects the power-normalizing gain", lambda v: v >= 0, ">= 0"),
        FieldSpec("gibbs_cost_multiplier", "float", 1.0, "Gibbs chain budget relative to matched compute", _positive, "> 0"),
        FieldSpec("block_length", "int", 10, "Gibbs sub-block length (must divide t)", _positive, ">= 1"),
        FieldSpec("bench_iterations", "int", 15, "timed iterations per benchmark point", _positive, ">= 1"),
    ]
}

_HIDDEN_KEYS = {"snr", "n_particles", "t"}  # list-valued; scalar views exist per subcommand


def _parse_value(spec: FieldSpec, raw, source: str):
    """Convert one raw value (string or JSON scalar/list) per the field spec."""

    def fail(msg):
        raise UsageError(f"invalid value for {source}: {msg}")

    def one(kind, text):
        try:
            if kind == "int":
                return int(text)
            if kind == "float":
                return float(text)
        except (TypeError, ValueError):
            fail(f"got {text!r}, expected {kind}")
        return str(text)

    if spec.kind in ("int_list", "float_list"):
        base = spec.kind[:-5]
        if isinstance(raw, str):
            items = [x for x in raw.split(",") if x != ""]
        elif isinstance(raw, (list, tuple)):
            items = list(raw)
        else:
            items = [raw]
        values = [one(base, x) for x in items]
        if not values:
            fail("got an empty list")
        for v in values:
            if spec.check is not None and not spec.check(v):
                fail(f"got {v!r}, allowed range {spec.range_text}")
        return values

    value = one(spec.kind, raw)
    if spec.choices and value not in spec.choices:
        fail(f"got {value!r}, allowed values {'/'.join(spec.choices)}")
    if spec.check is not None and not spec.check(value):
        fail(f"got {value!r}, allowed range {spec.range_text}")
    return value


class UsageError(Exception):
    """Invalid invocation; maps to exit code 2."""


@dataclass
class CliInvocation:
    subcommand: str
    values: dict
    output_dir: Path
    quiet: bool
    no_figures: bool
    frame_path: Path | None = None
    out_path: Path | None = None
    strip_truth: bool = False
    explicit: frozenset = frozenset()  # keys set by config file or command line


def _schema_epilog() -> str:
    lines = ["configuration keys (settable via config file or --set key=value):"]
    for spec in CONFIG_SCHEMA.values():
        constraint = f" [{spec.range_text}]" if spec.range_text else ""
        choice = f" [{'/'.join(spec.choices)}]" if spec.choices else ""
        lines.append(f"  {spec.name:<22} {spec.help}{constraint}{choice} (default {spec.default!r})")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaytrack",
        description="Channel tracking and parameter estimation for dual-hop relay networks.",
        epilog=_schema_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"relaytrack {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("--output-dir", type=str, default=None, help="result directory")
        p.add_argument("--seed", type=str, default=None, help="master seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p = sub.add_parser("simulate", help="simulate one frame and write it to a frame file")
    common(p)
    p.add_argument("--t", type=str, default=None, help="frame length in symbols")
    p.add_argument("--relays", type=str, default=None)
    p.add_argument("--snr-db", type=str, default=None)
    p.add_argument("--alpha", type=str, default=None)
    p.add_argument("--beta", type=str, default=None)
    p.add_argument("--out", type=str, default=None, help="frame file path (default <output-dir>/frame.csv)")
    p.add_argument("--strip-truth", action="store_true", help="omit the simulated ground truth")

    p = sub.add_parser("estimate", help="run one sampler chain on a frame file")
    common(p)
    p.add_argument("--frame", type=str, required=True, help="frame file produced by simulate")
    p.add_argument("--n-particles", type=str, default=None)
    p.add_argument("--iterations", type=str, default=None)
    p.add_argument("--burnin", type=str, default=None)
    p.add_argument("--thin", type=str, default=None)
    p.add_argument("--sampler", type=str, default=None)
    p.add_argument("--alpha", type=str, default=None, help="fix the chain's initial alpha instead of a prior draw")
    p.add_argument("--beta", type=str, default=None, help="fix the chain's initial beta instead of a prior draw")
    p.add_argument("--block-length", type=str, default=None)

    p = sub.add_parser("sweep", help="run the (N, T, SNR) experiment grid")
    common(p)
    p.add_argument("--snr", type=str, default=None, help="comma-separated SNR grid in dB")
    p.add_argument("--n-particles", type=str, default=None, help="comma-separated particle counts")
    p.add_argument("--t", type=str, default=None, help="comma-separated frame lengths")
    p.add_argument("--frames", type=str, default=None)
    p.add_argument("--iterations", type=str, default=None)
    p.add_argument("--burnin", type=str, default=None)
    p.add_argument("--sampler", type=str, default=None)
    p.add_argument("--workers", type=str, default=None)
    p.add_argument("--alpha", type=str, default=None)
    p.add_argument("--beta", type=str, default=None)
    p.add_argument("--gibbs-cost-multiplier", type=str, default=None)

    p = sub.add_parser("bench", help="measure per-iteration cost scaling in N and T")
    common(p)
    p.add_argument("--n-particles", type=str, default=None, help="comma-separated particle counts")
    p.add_argument("--t", type=str, default=None, help="comma-separated frame lengths")
    p.add_argument("--bench-iterations", type=str, default=None)
    p.add_argument("--snr-db", type=str, default=None)

    p = sub.add_parser("bcrlb", help="write the recursive MSE lower-bound curve")
    common(p)
    p.add_argument("--alpha", type=str, default=None)
    p.add_argument("--beta", type=str, default=None)
    p.add_argument("--snr-db", type=str, default=None)
    p.add_argument("--t", type=str, default=None)
    p.add_argument("--relays", type=str, default=None)
    return parser


_FLAG_TO_KEY = {
    "snr_db": "snr_db",
    "t": "t",
    "relays": "relays",
    "alpha": "alpha",
    "beta": "beta",
    "n_particles": "n_particles",
    "iterations": "iterations",
    "burnin": "burnin",
    "thin": "thin",
    "frames": "frames",
    "sampler": "sampler",
    "workers": "workers",
    "snr": "snr",
    "seed": "seed",
    "gibbs_cost_multiplier": "gibbs_cost_multiplier",
    "block_length": "block_length",
    "bench_iterations": "bench_iterations",
}


def parse_and_validate(argv) -> CliInvocation:
    """Parse argv into a fully resolved, validated invocation.

    Raises UsageError (exit code 2) for unknown keys, malformed values or
    out-of-range settings; the message names the offending key, the received
    value and the allowed range.
    """
    parser = _build_parser()
    args = parser.parse_args(argv)

    values = {name: spec.default for name, spec in CONFIG_SCHEMA.items()}
    explicit = set()

    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        for key, raw in loaded.items():
            if key not in CONFIG_SCHEMA:
                raise UsageError(f"unknown configuration key in {path}: {key!r}")
            values[key] = _parse_value(CONFIG_SCHEMA[key], raw, f"config key {key!r}")
            explicit.add(key)

    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"unknown configuration key for --set: {key!r}")
        values[key] = _parse_value(CONFIG_SCHEMA[key], raw, f"--set {key}")
        explicit.add(key)

    for attr, key in _FLAG_TO_KEY.items():
        raw = getattr(args, attr, None)
        if raw is not None:
            values[key] = _parse_value(CONFIG_SCHEMA[key], raw, f"--{attr.replace('_', '-')}")
            explicit.add(key)

    out_dir = args.output_dir or values["output_dir"] or os.environ.get(ENV_OUTPUT_DIR) or "results"
    return CliInvocation(
        subcommand=args.subcommand,
        values=values,
        output_dir=Path(out_dir),
        quiet=args.quiet,
        no_figures=args.no_figures,
        frame_path=Path(args.frame) if getattr(args, "frame", None) else None,
        out_path=Path(args.out) if getattr(args, "out", None) else None,
        strip_truth=getattr(args, "strip_truth", False),
        explicit=frozenset(explicit),
    )


def _progress_printer(quiet: bool, label: str):
    if quiet:
        return None
    state = {"next": 10}

    def callback(done, total):
        pct = 100 * done // total
        while pct >= state["next"]:
            print(f"{label}: {state['next']}% ({done}/{total})", file=sys.stderr)
            state["next"] += 10

    return callback


def _resolved_config(inv: CliInvocation) -> dict:
    cfg = dict(inv.values)
    cfg["output_dir"] = str(inv.output_dir)
    cfg["subcommand"] = inv.subcommand
    return cfg


def _relay_for(values: dict, noise: NoiseConfig) -> RelayFunction:
    if values["relay"] == "identity":
        return RelayFunction.identity()
    if values["relay_gain"] > 0:
        return RelayFunction.amplify_forward(values["relay_gain"])
    return RelayFunction.power_normalized(noise)


def _prior_for(values: dict) -> PriorConfig:
    return PriorConfig(values["prior_a"], values["prior_b"], values["prior_c"], values["prior_d"])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _scalar(values: dict, key: str):
    v = values[key]
    return v[0] if isinstance(v, list) else v


def _cmd_simulate(inv: CliInvocation) -> int:
    values = inv.values
    harness.write_manifest(inv.output_dir, _resolved_config(inv))
    t = _scalar(values, "t")
    L = values["relays"]
    noise = NoiseConfig.from_snr_db(values["snr_db"])
    relay = _relay_for(values, noise)
    truth = StaticParams(alpha=np.full(L, values["alpha"]), beta=np.full(L, values["beta"]))
    rng = harness.derive_rng(values["seed"], "simulate", t, L, values["snr_db"])
    frame = simulate_frame(truth, FrameConfig.with_unit_pilots(t, L, values["snr_db"]), noise, relay, rng)
    out = inv.out_path or (inv.output_dir / "frame.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    framefile.write_frame(frame, out, strip_truth=inv.strip_truth)
    if not inv.quiet:
        print(f"wrote frame file: {out}", file=sys.stderr)
    return 0


def _cmd_estimate(inv: CliInvocation) -> int:
    values = inv.values
    frame = framefile.read_frame(inv.frame_path)
    harness.write_manifest(inv.output_dir, _resolved_config(inv))
    noise = NoiseConfig.from_snr_db(frame.config.snr_db)
    relay = _relay_for(values, noise)
    prior = _prior_for(values)
    rng = harness.derive_rng(values["seed"], "estimate", str(inv.frame_path))
    progress = _progress_printer(inv.quiet, "chain")
    sampler = values["sampler"]
    if sampler == "both":
        raise UsageError("invalid value for --sampler: got 'both', estimate runs a single sampler")
    initial = None
    if {"alpha", "beta"} & inv.explicit:
        L = frame.config.n_relays
        initial = StaticParams(alpha=np.full(L, values["alpha"]), beta=np.full(L, values["beta"]))
    if sampler == "adpmcmc":
        cfg = SamplerConfig(
            iterations=values["iterations"],
            burnin=values["burnin"],
            n_particles=_scalar(values, "n_particles"),
            thin=values["thin"],
            prior=prior,
            noise=noise,
            relay=relay,
            initial_params=initial,
        )
        trace = run_pmcmc(frame, cfg, rng, progress=progress)
    else:
        cfg = GibbsConfig(
            iterations=values["iterations"],
            burnin=values["burnin"],
            block_length=values["block_length"],
            thin=values["thin"],
            prior=prior,
            noise=noise,
            relay=relay,
            initial_params=initial,
        )
        trace = run_gibbs(frame, cfg, rng, progress=progress)

    summary = harness.summarize_chain(trace, values["burnin"])
    draws = trace.param_draws(post_burnin=True)
    result = {
        "sampler": sampler,
        "acceptance_rate": trace.acceptance_rate,
        "mmse_alpha": [float(a) for a in summary.mmse_params.alpha],
        "mmse_beta": [float(b) for b in summary.mmse_params.beta],
        "ci90_alpha": [float(np.quantile(draws[:, 0], 0.05)), float(np.quantile(draws[:, 0], 0.95))],
        "iterations": trace.iterations,
        "burnin": values["burnin"],
    }
    if frame.has_truth:
        mse_h, mse_g, mse_total = harness.mse_against_truth(summary, frame.truth_path)
        result.update({"mse_h": mse_h, "mse_g": mse_g, "mse_total": mse_total})
        result["truth_alpha"] = [float(a) for a in frame.truth_params.alpha]
        result["truth_beta"] = [float(b) for b in frame.truth_params.beta]
    (inv.output_dir / "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")

    with open(inv.output_dir / "paths.csv", "w", newline="") as fh:
        header = ["t"]
        for name in ("h", "g"):
            for l in range(frame.config.n_relays):
                header += [
                    f"{name}{l + 1}_mmse_re", f"{name}{l + 1}_mmse_im",
                    f"{name}{l + 1}_lo_re", f"{name}{l + 1}_lo_im",
                    f"{name}{l + 1}_hi_re", f"{name}{l + 1}_hi_im",
                ]
        fh.write(",".join(header) + "\n")
        for t in range(frame.config.n_symbols):
            row = [str(t)]
            for name in ("h", "g"):
                mean = getattr(summary.mmse_path, name)
                lo = getattr(summary.ci_lower, name)
                hi = getattr(summary.ci_upper, name)
                for l in range(frame.config.n_relays):
                    row += [_fmt(mean[l, t].real), _fmt(mean[l, t].imag),
                            _fmt(lo[l, t].real), _fmt(lo[l, t].imag),
                            _fmt(hi[l, t].real), _fmt(hi[l, t].imag)]
            fh.write(",".join(row) + "\n")

    with open(inv.output_dir / "trace.csv", "w", newline="") as fh:
        half = draws.shape[1] // 2
        fh.write(",".join([f"alpha_{i+1}" for i in range(half)] + [f"beta_{i+1}" for i in range(half)]) + "\n")
        for row in trace.param_draws(post_burnin=False):
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")

    if not inv.no_figures:
        truth = frame.truth_path if frame.has_truth else None
        figures.plot_estimate_bands(summary, inv.output_dir / "figures" / "estimate_h.png", truth, "h")
        figures.plot_estimate_bands(summary, inv.output_dir / "figures" / "estimate_g.png", truth, "g")
        figures.plot_parameter_trace(trace.param_draws(post_burnin=False), inv.output_dir / "figures" / "trace.png")
    return 0


def _experiment_config(inv: CliInvocation) -> harness.ExperimentConfig:
    values = inv.values
    return harness.ExperimentConfig(
        n_values=tuple(values["n_particles"]),
        t_values=tuple(values["t"]),
        snr_db_values=tuple(values["snr"]),
        frames_per_point=values["frames"],
        chain=harness.ChainSettings(values["iterations"], values["burnin"], values["thin"]),
        seed=values["seed"],
        sampler=values["sampler"],
        output_dir=str(inv.output_dir),
        n_relays=values["relays"],
        truth_alpha=values["alpha"],
        truth_beta=values["beta"],
        prior=_prior_for(values),
        workers=values["workers"],
        gibbs_cost_multiplier=values["gibbs_cost_multiplier"],
        gibbs_block_length=values["block_length"],
    )


def _cmd_sweep(inv: CliInvocation) -> int:
    cfg = _experiment_config(inv)
    if cfg.chain.iterations <= cfg.chain.burnin:
        raise UsageError(
            f"invalid value for --burnin: got {cfg.chain.burnin}, "
            f"allowed range [0, iterations) with iterations={cfg.chain.iterations}"
        )
    harness.write_manifest(inv.output_dir, _resolved_config(inv))
    result = harness.run_sweep(cfg, progress=_progress_printer(inv.quiet, "sweep"))
    harness.emit_results(result, inv.output_dir, config=None)
    if not inv.no_figures:
        figures.render_sweep_figures(result, inv.output_dir)
    failed = [r for r in result.records if r.error]
    for rec in failed:
        print(f"point {rec.point_id} failed: {rec.error}", file=sys.stderr)
    return 1 if len(failed) == len(result.records) else 0


def _cmd_bench(inv: CliInvocation) -> int:
    values = inv.values
    harness.write_manifest(inv.output_dir, _resolved_config(inv))
    result = harness.benchmark_cost(
        n_values=tuple(values["n_particles"]) if "n_particles" in inv.explicit else (2000, 4000, 8000),
        t_values=tuple(values["t"]) if "t" in inv.explicit else (100, 200, 400),
        n_relays=values["relays"],
        iterations=values["bench_iterations"],
        seed=values["seed"],
        snr_db=values["snr_db"],
    )
    with open(inv.output_dir / "bench.csv", "w", newline="") as fh:
        fh.write("n_particles,n_symbols,n_relays,seconds_per_iteration\n")
        for row in result.rows:
            fh.write(
                f"{row['n_particles']},{row['n_symbols']},{row['n_relays']},"
                f"{_fmt(row['seconds_per_iteration'])}\n"
            )
    (inv.output_dir / "scaling.json").write_text(
        json.dumps({"exponent_n": result.exponent_n, "exponent_t": result.exponent_t}, indent=2) + "\n"
    )
    if not inv.quiet:
        print(f"fitted exponents: N {result.exponent_n:.3f}, T {result.exponent_t:.3f}", file=sys.stderr)
    return 0


def _cmd_bcrlb(inv: CliInvocation) -> int:
    values = inv.values
    harness.write_manifest(inv.output_dir, _resolved_config(inv))
    t = _scalar(values, "t")
    L = values["relays"]
    noise = NoiseConfig.from_snr_db(values["snr_db"])
    params = StaticParams(alpha=np.full(L, values["alpha"]), beta=np.full(L, values["beta"]))
    trace_inv, trace_raw = bcrlb_mod.bcrlb_curves(params, noise, 1.0 + 0.0j, t)
    with open(inv.output_dir / "bcrlb.csv", "w", newline="") as fh:
        fh.write("t,trace_inv,trace_raw\n")
        for i in range(t):
            fh.write(f"{i + 1},{_fmt(float(trace_inv[i]))},{_fmt(float(trace_raw[i]))}\n")
    if not inv.no_figures:
        figures.plot_bcrlb_curve(trace_inv, inv.output_dir / "figures" / "bcrlb.png", trace_raw)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
    "bcrlb": _cmd_bcrlb,
}


def dispatch(inv: CliInvocation) -> int:
    """Execute a validated invocation; returns the process exit code."""
    inv.output_dir.mkdir(parents=True, exist_ok=True)
    return _COMMANDS[inv.subcommand](inv)


def main(argv=None) -> int:
    try:
        inv = parse_and_validate(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help / usage errors
        return int(exc.code or 0)
    try:
        return dispatch(inv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
