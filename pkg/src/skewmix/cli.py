"""Experiment runner: config ingestion, orchestration, CSV/SVG/manifest output.

A single JSON config describes the system, the observables, one experiment,
and the output location; every leaf can be overridden on the command line
with --set dotted.path=value.  Runs are deterministic for a fixed (config,
seed, version): all emitted CSV and result files are bit-identical across
repeats (the manifest additionally carries wall-clock timings, which are
excluded from that guarantee).

Config schema (flat, JSON):

    system:      preset NAME | {alphabet_size, transitions, theta,
                 potential: {depth, values}, cocycle: {depth, values}}
                 plus optional m (state depth; default fits the tables)
    observables: {global: NAME, local: NAME}      (presets; see list-presets)
    experiment:  {kind: gibbs|spectrum|correlate|cancel|access|rates, ...}
    output:      {directory: PATH, plots: bool}

Experiment parameters by kind (all optional, defaults shown by `validate`):
    gibbs:     ball_radii (list of theta-power exponents)
    spectrum:  xi_max, points
    correlate: n (list), alpha, estimators (subset of exact|spectral|direct),
               samples, seed
    cancel:    xi, n, max_pairs, slack, draws, seed
    access:    n, N, budget, slack (null = vacuous junction), radius_threshold
    rates:     n (list), alpha, window [lo, hi], k, eps, exponent_range
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, correlate, observables, presets, skewprod, twisted
from .errors import ConfigError, SkewmixError
from .gibbs import Potential, rpf_eigendata, spectral_gap_fit, gibbs_ball_fit
from .skewprod import FiberCocycle, center
from .symbolic import StateFunction, build_sft, format_word, parse_word

_KINDS = ("gibbs", "spectrum", "correlate", "cancel", "access", "rates")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_config(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc


def apply_override(config: dict, assignment: str) -> None:
    """Set a config leaf by dotted path; the value is parsed as JSON if possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {part} is not a table")
    node[parts[-1]] = value


def _require(config: dict, path: str) -> Any:
    node: Any = config
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"{path}: required field is missing")
        node = node[part]
    return node


def build_from_config(config: dict) -> presets.SystemBundle:
    system = _require(config, "system")
    m = system.get("m")
    if "preset" in system:
        name = system["preset"]
        if name not in presets.SYSTEMS:
            raise ConfigError(f"system.preset: unknown preset {name!r}")
        return presets.build_system(name, m=m)
    for key in ("alphabet_size", "transitions", "theta", "potential", "cocycle"):
        if key not in system:
            raise ConfigError(f"system.{key}: required field is missing")
    sft = build_sft(system["alphabet_size"], system["transitions"], system["theta"])
    pot_block = system["potential"]
    u = Potential.from_table(
        sft, int(pot_block["depth"]),
        {parse_word(k): float(v) for k, v in pot_block["values"].items()},
    )
    coc_block = system["cocycle"]
    depth = m if m is not None else max(int(pot_block["depth"]), int(coc_block["depth"]))
    rpf = rpf_eigendata(sft, u, depth)
    f_raw = FiberCocycle.from_table(
        sft, int(coc_block["depth"]),
        {parse_word(k): float(v) for k, v in coc_block["values"].items()},
    )
    return presets.SystemBundle(
        name="custom", sft=sft, potential=u, rpf=rpf, cocycle=center(f_raw, rpf)
    )


def build_observables_from_config(config: dict, bundle: presets.SystemBundle):
    obs = config.get("observables", {})
    m = bundle.rpf.depth
    phi = psi = None
    if "global" in obs:
        phi = presets.build_global(str(obs["global"]), bundle.sft, m)
    if "local" in obs:
        psi = presets.build_local(str(obs["local"]), bundle.sft, m)
    return phi, psi


def validate_config(config: dict) -> list[str]:
    """Full validation; returns human-readable notes, raises ConfigError."""
    notes = []
    bundle = build_from_config(config)
    notes.append(f"system ok: {bundle.name}, {len(bundle.rpf.words)} states at depth {bundle.rpf.depth}")
    exp = _require(config, "experiment")
    kind = exp.get("kind")
    if kind not in _KINDS:
        raise ConfigError(f"experiment.kind: expected one of {_KINDS}, got {kind!r}")
    alpha = exp.get("alpha", 0.4)
    if not 0.0 < float(alpha) < 0.5:
        raise ConfigError(f"experiment.alpha: must lie in (0, 1/2), got {alpha}")
    if kind in ("correlate", "rates"):
        phi, psi = build_observables_from_config(config, bundle)
        if phi is None or psi is None:
            raise ConfigError("observables: correlate/rates need both global and local presets")
        notes.append("observables ok")
    notes.append(f"experiment ok: {kind}")
    return notes


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Emitter:
    """Writes output files and records every path for the manifest."""

    directory: Path
    outputs: list[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.directory / name

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(cell) for cell in row])

    def write_json(self, name: str, payload: dict) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(cell) -> str:
    if isinstance(cell, float):
        return repr(cell)
    return "" if cell is None else str(cell)


def _maybe_plot(emitter: Emitter, enabled: bool, name: str, xs, ys, xlabel: str, ylabel: str, logy: bool = False) -> None:
    if not enabled:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if logy:
        ax.semilogy(xs, np.abs(ys), marker="o", ms=3)
    else:
        ax.plot(xs, ys, marker="o", ms=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(emitter.path(name), format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _run_gibbs(bundle, exp, emitter, plots) -> dict:
    rpf = bundle.rpf
    emitter.write_json("rpf_result.json", rpf.export())
    verdicts = {
        "g_row_sums": rpf.row_sum_error() <= 1e-12,
        "shift_invariance": rpf.invariance_error() <= 1e-12,
        "consistency": rpf.consistency_error() <= 1e-12,
    }
    ones = StateFunction.constant(rpf.sft, rpf.depth, 1.0)
    l1 = float(np.max(np.abs(rpf.stochastic_matrix @ ones.values - 1.0)))
    verdicts["l1_normalized"] = l1 <= 1e-12
    radii = exp.get("ball_radii", list(range(1, min(9, rpf.depth * 4))))
    c_u, dim = gibbs_ball_fit(rpf, radii)
    amp, delta = spectral_gap_fit(rpf)
    info = {
        "lambda": rpf.eigenvalue,
        "ball_c_u": c_u,
        "ball_dimension": dim,
        "gap_amplitude": amp,
        "gap_rate": delta,
    }
    return {"verdicts": verdicts, "info": info}


def _run_spectrum(bundle, exp, emitter, plots) -> dict:
    xi_max = float(exp.get("xi_max", 0.3))
    points = int(exp.get("points", 61))
    grid = np.linspace(-xi_max, xi_max, points)
    curve = twisted.spectral_curve(bundle.rpf, bundle.cocycle, grid)
    rows = [
        [int(0) if xi == 0 else float(xi), float(l.real), float(l.imag), float(abs(l))]
        for xi, l in zip(curve.xis, curve.lams)
    ]
    rows = [[float(xi), float(l.real), float(l.imag), float(abs(l))] for xi, l in zip(curve.xis, curve.lams)]
    emitter.write_csv("spectral_curve.csv", ["xi", "re_lambda", "im_lambda", "abs_lambda"], rows)
    _maybe_plot(emitter, plots, "spectral_curve.svg", curve.xis, np.abs(curve.lams), "xi", "|lambda|")
    verdicts = {
        "lambda_zero": curve.lambda_at_zero_error() <= 1e-12,
        "modulus_bound": bool(np.all(np.abs(curve.lams) <= 1.0 + 1e-12)),
        "curvature_matches_variance": abs(curve.curvature + curve.sigma2) <= 0.02 * curve.sigma2,
    }
    info = {
        "sigma2": curve.sigma2,
        "curvature": curve.curvature,
        "a_kappa": curve.a_kappa,
        "cubic_bound": curve.cubic_bound,
        "crossing_xi": curve.crossing_xi,
    }
    return {"verdicts": verdicts, "info": info}


def _correlation_rows(series) -> list[list]:
    rows = []
    for i, n in enumerate(series.ns):
        if series.band_zero is not None:
            b0 = float(np.abs(series.band_zero[i]))
            bl = float(np.abs(series.band_low[i]))
            bh = float(np.abs(series.band_high[i]))
        else:
            b0 = bl = bh = None
        rows.append(
            [int(n), float(series.values[i].real), float(series.values[i].imag),
             float(series.errors[i]), b0, bl, bh, series.estimator]
        )
    return rows


def _run_correlate(bundle, phi, psi, exp, emitter, plots, seed) -> dict:
    if phi is None or psi is None:
        raise ConfigError("observables: correlate needs both global and local presets")
    ns = [int(n) for n in exp.get("n", [0, 1, 2, 4, 8, 12])]
    alpha = float(exp.get("alpha", 0.4))
    estimators = exp.get("estimators", ["exact", "spectral"])
    samples = int(exp.get("samples", 100_000))
    rpf, f = bundle.rpf, bundle.cocycle
    rows: list[list] = []
    series_map = {}
    if "spectral" in estimators:
        series_map["spectral"] = correlate.cov_series_spectral(rpf, f, phi, psi, ns, alpha)
    if "exact" in estimators:
        series_map["exact"] = correlate.cov_series_exact(rpf, f, phi, psi, ns)
    if "direct" in estimators:
        series_map["direct"] = correlate.cov_series_direct(rpf, f, phi, psi, ns, samples=samples, seed=seed)
    for name in ("exact", "spectral", "direct"):
        if name in series_map:
            rows.extend(_correlation_rows(series_map[name]))
    emitter.write_csv(
        "correlations.csv",
        ["n", "re_cov", "im_cov", "err", "band0", "band_low", "band_high", "estimator"],
        rows,
    )
    verdicts: dict[str, bool] = {}
    if "exact" in series_map and "spectral" in series_map:
        a, b = series_map["exact"].values, series_map["spectral"].values
        scale = np.maximum(np.abs(a), 1e-10 / 1e-6)
        verdicts["estimator_agreement"] = bool(
            np.all(np.abs(a - b) <= np.maximum(1e-6 * np.abs(a), 1e-10))
        )
    if "direct" in series_map:
        ref = series_map.get("exact", series_map.get("spectral"))
        if ref is not None:
            d = series_map["direct"]
            verdicts["direct_within_3_stderr"] = bool(
                np.all(np.abs(d.values - ref.values) <= 3.0 * np.maximum(d.errors, 1e-12))
            )
    if "spectral" in series_map:
        s = series_map["spectral"]
        totals = s.band_zero + s.band_low + s.band_high
        recomputed = totals - (observables.nu_av_global(phi, rpf) * observables.nu_local(psi, rpf))
        verdicts["band_accounting"] = bool(np.allclose(recomputed, s.values, rtol=0, atol=1e-12))
    any_series = next(iter(series_map.values()))
    _maybe_plot(emitter, plots, "correlations.svg", any_series.ns, any_series.values.real, "n", "|cov|", logy=True)
    return {"verdicts": verdicts, "info": {"estimators": sorted(series_map)}}


def _run_cancel(bundle, exp, emitter, plots, seed) -> dict:
    xi = float(exp.get("xi", 1.0))
    n = int(exp.get("n", 8))
    max_pairs = int(exp.get("max_pairs", 4))
    slack = int(exp.get("slack", 2))
    draws = int(exp.get("draws", 100))
    rpf, f = bundle.rpf, bundle.cocycle
    cycle = twisted.find_us_cycle(rpf, f, xi, n, max_pairs=max_pairs, slack=slack)
    verdicts = {"witness_found": cycle is not None}
    info: dict[str, Any] = {"xi": xi, "n": n}
    if cycle is not None:
        op = twisted.twisted_matrix(rpf, f, xi)
        rng = np.random.default_rng(seed)
        all_ok = True
        for _ in range(draws):
            v = twisted.sample_nice(rpf.sft, rpf.depth, cycle.epsilon, op.h_const, rng)
            hit = False
            for pair in cycle.pairs:
                ok, _audit = twisted.cancellation_pair_check(rpf, f, op, pair, v, cycle.epsilon)
                if ok:
                    hit = True
                    break
            all_ok = all_ok and hit
        verdicts["dichotomy"] = all_ok
        info.update(
            {
                "pairs": len(cycle.pairs),
                "phase": cycle.total_phase,
                "tolerance": cycle.total_tolerance,
                "margin": cycle.margin,
                "epsilon": cycle.epsilon,
                "draws": draws,
            }
        )
        emitter.write_json(
            "cancel_report.json",
            {
                "xi": xi,
                "n": n,
                "epsilon": cycle.epsilon,
                "h_const": cycle.h_const,
                "phase": cycle.total_phase,
                "tolerance": cycle.total_tolerance,
                "margin": cycle.margin,
                "pairs": [
                    {
                        "x": format_word(p.x),
                        "y": format_word(p.y),
                        "phase": p.phase,
                        "stable_tolerance": st,
                        "junction_distance": d,
                        "junction_tolerance": jt,
                    }
                    for p, st, d, jt in zip(
                        cycle.pairs, cycle.stable_tols, cycle.junction_dists, cycle.junction_tols
                    )
                ],
            },
        )
    return {"verdicts": verdicts, "info": info}


def _run_access(bundle, exp, emitter, plots) -> dict:
    n = int(exp.get("n", 8))
    big_n = int(exp.get("N", 4))
    budget = int(exp.get("budget", 2_000_000))
    slack = exp.get("slack")
    report = skewprod.collapsed_access_coverage(
        bundle.sft, bundle.rpf, bundle.cocycle, n=n, N=big_n, budget=budget,
        slack=None if slack is None else int(slack),
    )
    rows = [[float(t), int(length), int(n)] for t, length in report.entries]
    emitter.write_csv("access.csv", ["t", "cycle_length", "n"], rows)
    probe = skewprod.non_arithmeticity_probe(bundle.sft, bundle.cocycle)
    verdicts: dict[str, bool | None] = {}
    threshold = exp.get("radius_threshold")
    if threshold is not None:
        verdicts["coverage"] = report.covering_radius <= float(threshold)
    info = {
        "covering_radius": report.covering_radius,
        "achieved_count": len(report.achieved),
        "truncated": report.truncated,
        "slack": report.slack,
        "constant_candidate": probe.constant_candidate,
        "lattice_candidate": probe.lattice_candidate,
        "lattice_r": probe.lattice_r,
    }
    return {"verdicts": verdicts, "info": info}


def _run_rates(bundle, phi, psi, exp, emitter, plots) -> dict:
    if phi is None or psi is None:
        raise ConfigError("observables: rates needs both global and local presets")
    default_ns = sorted(set(int(round(x)) for x in np.logspace(np.log10(16), np.log10(1024), 13)))
    ns = [int(n) for n in exp.get("n", default_ns)]
    alpha = float(exp.get("alpha", 0.4))
    window = tuple(int(x) for x in exp.get("window", [min(ns), max(ns)]))
    k = int(exp.get("k", 4))
    eps = float(exp.get("eps", 0.1))
    rpf, f = bundle.rpf, bundle.cocycle
    series = correlate.cov_series_spectral(rpf, f, phi, psi, ns, alpha)
    emitter.write_csv(
        "rates.csv",
        ["n", "re_cov", "im_cov", "err", "band0", "band_low", "band_high", "estimator"],
        _correlation_rows(series),
    )
    fit = correlate.rate_fit(series, window)
    lf_rep = correlate.lf_bound_check(series, phi, rpf, k=k, eps=eps)
    verdicts: dict[str, bool] = {"lf_envelope": lf_rep.passed}
    exponent_range = exp.get("exponent_range")
    if exponent_range is not None:
        lo, hi = float(exponent_range[0]), float(exponent_range[1])
        verdicts["exponent_in_range"] = lo <= fit.exponent <= hi
    _maybe_plot(emitter, plots, "rates.svg", series.ns, series.values.real, "n", "|cov|", logy=True)
    info = {
        "exponent": fit.exponent,
        "ci": list(fit.ci),
        "verdicts_by_level": {str(k_): v for k_, v in fit.verdicts.items()},
        "lf_envelope_c": lf_rep.c,
    }
    return {"verdicts": verdicts, "info": info}


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def run(config_path: str | Path, overrides: list[str] = (), out_dir: str | None = None,
        seed: int | None = None, plots: bool | None = None) -> dict:
    """Execute the configured experiment; returns the manifest dictionary."""
    config = load_config(config_path)
    for assignment in overrides:
        apply_override(config, assignment)
    validate_config(config)

    output = config.get("output", {})
    directory = Path(out_dir if out_dir is not None else output.get("directory", "out"))
    plots_on = bool(plots if plots is not None else output.get("plots", False))
    run_seed = int(seed if seed is not None else config.get("experiment", {}).get("seed", 0))

    bundle = build_from_config(config)
    phi, psi = build_observables_from_config(config, bundle)
    exp = _require(config, "experiment")
    kind = exp["kind"]

    emitter = Emitter(directory=directory)
    timings: dict[str, float] = {}
    start = time.perf_counter()
    if kind == "gibbs":
        result = _run_gibbs(bundle, exp, emitter, plots_on)
    elif kind == "spectrum":
        result = _run_spectrum(bundle, exp, emitter, plots_on)
    elif kind == "correlate":
        result = _run_correlate(bundle, phi, psi, exp, emitter, plots_on, run_seed)
    elif kind == "cancel":
        result = _run_cancel(bundle, exp, emitter, plots_on, run_seed)
    elif kind == "access":
        result = _run_access(bundle, exp, emitter, plots_on)
    elif kind == "rates":
        result = _run_rates(bundle, phi, psi, exp, emitter, plots_on)
    else:  # pragma: no cover - guarded by validate_config
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    timings[kind] = time.perf_counter() - start

    verdicts = {
        name: ("pass" if ok else "fail") if ok is not None else "skipped"
        for name, ok in result["verdicts"].items()
    }
    manifest = {
        "version": __version__,
        "seed": run_seed,
        "config": config,
        "outputs": sorted(emitter.outputs),
        "timings": timings,
        "verdicts": verdicts,
        "info": _jsonable(result["info"]),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="skewmix", description="Global-local mixing experiments on symbolic skew products.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")
    p_run.add_argument("--plots", choices=["on", "off"], default=None)

    sub.add_parser("list-presets", help="list named systems and observables")

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")

    args = parser.parse_args(argv)

    if args.command == "list-presets":
        print(presets.preset_listing())
        return 0

    if args.command == "validate":
        try:
            config = load_config(args.config)
            for assignment in args.overrides:
                apply_override(config, assignment)
            for note in validate_config(config):
                print(note)
        except SkewmixError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        return 0

    try:
        plots = None if args.plots is None else args.plots == "on"
        manifest = run(args.config, overrides=args.overrides, out_dir=args.out,
                       seed=args.seed, plots=plots)
    except SkewmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, verdict in sorted(manifest["verdicts"].items()):
        print(f"[{verdict.upper():>7}] {name}")
    failed = any(v == "fail" for v in manifest["verdicts"].values())
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
