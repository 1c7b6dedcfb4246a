"""Benchmark sweeps that emit figure-style CSV/JSON artifacts.

Each mode expands into independent cells, one per (dataset, N, seed)
condition. Cells carry their own seeds, so they can run in any order or
in parallel; a failed cell is recorded and the sweep continues. Rows are
long-format (dataset, n, seed, metric, value, wall_clock) and the summary
aggregates them as mean plus standard error over repeats.

Modes
-----
recovery-curves   parameter-recovery metrics against training size
em-comparison     EM cost and quality per initialization strategy
svd-spectrum      singular values of the projected factor per depth k
runtime           fitting wall-clock against training size
ablation-nonunit  recovery without the unit-variance observation scaling
ablation-momconv  converted-moment fits against direct latent-signal fits
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BestLDSError, ConfigError
from .laplace_em import (
    EMConfig,
    bestlds_init,
    gaussian_init,
    random_init,
    run_em,
)
from .metrics import error_report
from .model import make_preset, simulate
from .moments import HankelConfig, build_hankel_moments, build_real_hankel_moments, convert, gaussian_moments
from .ssid import fit_bestlds, hankel_spectrum, identify_moments

MODES = (
    "recovery-curves",
    "em-comparison",
    "svd-spectrum",
    "runtime",
    "ablation-nonunit",
    "ablation-momconv",
)


@dataclass
class BenchmarkRow:
    dataset: str
    n: int
    seed: int
    metric: str
    value: float
    wall_clock: float


@dataclass
class BenchmarkReport:
    mode: str
    config: dict
    rows: list[BenchmarkRow] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        """Mean and SEM per (dataset, n, metric), pooled over seeds."""
        groups: dict[tuple, list[float]] = {}
        for row in self.rows:
            groups.setdefault((row.dataset, row.n, row.metric), []).append(row.value)
        out = []
        for (dataset, n, metric), values in sorted(groups.items()):
            arr = np.asarray(values, dtype=float)
            sem = (
                float(np.std(arr, ddof=1) / np.sqrt(arr.size))
                if arr.size >= 2
                else None
            )
            out.append(
                {
                    "dataset": dataset,
                    "n": n,
                    "metric": metric,
                    "mean": float(arr.mean()),
                    "sem": sem,
                    "repeats": int(arr.size),
                }
            )
        return out

    def save_rows_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "n", "seed", "metric", "value", "wall_clock"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.dataset,
                        row.n,
                        row.seed,
                        row.metric,
                        "%.17g" % row.value,
                        "%.6f" % row.wall_clock,
                    ]
                )

    def summary_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "config": self.config,
            "aggregates": self.aggregates(),
            "failures": self.failures,
        }
        if self.mode == "runtime":
            slope = runtime_slope(self)
            if slope is not None:
                out["log_log_slope"] = slope
        return out

    def save_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2)
            fh.write("\n")


def runtime_slope(report: BenchmarkReport) -> float | None:
    """Log-log slope of mean fit seconds against N (runtime mode)."""
    points = [
        (agg["n"], agg["mean"])
        for agg in report.aggregates()
        if agg["metric"] == "fit_seconds" and agg["mean"] > 0
    ]
    if len(points) < 2:
        return None
    ns, secs = zip(*points)
    coeffs = np.polyfit(np.log(ns), np.log(secs), 1)
    return float(coeffs[0])


def _report_rows(dataset, n, seed, report, wall_clock):
    rows = []
    for metric, value in report.to_dict().items():
        rows.append(BenchmarkRow(dataset, n, seed, metric, float(value), wall_clock))
    return rows


def _cell_recovery(spec: dict) -> list[BenchmarkRow]:
    true, inputs = make_preset(
        spec["preset"], spec["preset_seed"], unit_diag_z=spec.get("unit_diag_z")
    )
    ts = simulate(true, inputs, n_steps=spec["n"], seed=spec["seed"])
    t0 = time.perf_counter()
    result = fit_bestlds(ts, HankelConfig(k=spec["k"]), spec["p"])
    dt = time.perf_counter() - t0
    report = error_report(true, result.params)
    return _report_rows(spec["dataset"], spec["n"], spec["seed"], report, dt)


def _cell_momconv(spec: dict) -> list[BenchmarkRow]:
    true, inputs = make_preset(spec["preset"], spec["preset_seed"])
    ts = simulate(true, inputs, n_steps=spec["n"], seed=spec["seed"])
    cfg = HankelConfig(k=spec["k"])

    t0 = time.perf_counter()
    converted = fit_bestlds(ts, cfg, spec["p"])
    dt_conv = time.perf_counter() - t0

    t0 = time.perf_counter()
    sm = build_real_hankel_moments(ts.u, ts.z, cfg, ts.trial_starts)
    direct = identify_moments(gaussian_moments(sm), spec["p"])
    dt_direct = time.perf_counter() - t0

    base = spec["dataset"]
    rows = _report_rows(
        base + "-converted", spec["n"], spec["seed"],
        error_report(true, converted.params), dt_conv,
    )
    rows += _report_rows(
        base + "-direct-z", spec["n"], spec["seed"],
        error_report(true, direct.params), dt_direct,
    )
    return rows


def _cell_spectrum(spec: dict) -> list[BenchmarkRow]:
    true, inputs = make_preset(spec["preset"], spec["preset_seed"])
    ts = simulate(true, inputs, n_steps=spec["n"], seed=spec["seed"])
    cfg = HankelConfig(k=spec["k"])
    t0 = time.perf_counter()
    sm = build_hankel_moments(ts, cfg)
    values = hankel_spectrum(convert(sm).factor, cfg, ts.q, ts.m)
    dt = time.perf_counter() - t0
    dataset = f"{spec['dataset']}-k{spec['k']}"
    return [
        BenchmarkRow(dataset, spec["n"], spec["seed"], f"sv_{i:02d}", float(v), dt)
        for i, v in enumerate(values)
    ]


def _cell_runtime(spec: dict) -> list[BenchmarkRow]:
    true, inputs = make_preset(spec["preset"], spec["preset_seed"])
    ts = simulate(true, inputs, n_steps=spec["n"], seed=spec["seed"])
    t0 = time.perf_counter()
    fit_bestlds(ts, HankelConfig(k=spec["k"]), spec["p"])
    dt = time.perf_counter() - t0
    return [
        BenchmarkRow(spec["dataset"], spec["n"], spec["seed"], "fit_seconds", dt, dt)
    ]


def _cell_em(spec: dict) -> list[BenchmarkRow]:
    true, inputs = make_preset(spec["preset"], spec["preset_seed"])
    ts = simulate(true, inputs, n_steps=spec["n"], seed=spec["seed"])
    k, p = spec["k"], true.p

    t0 = time.perf_counter()
    if spec["init"] == "random":
        start = random_init(p, true.q, true.m, seed=spec["init_seed"])
    elif spec["init"] == "gaussian":
        start = gaussian_init(ts, k, p)
    else:
        start = bestlds_init(ts, k, p)
    init_seconds = time.perf_counter() - t0

    trace = run_em(start, ts, EMConfig(max_iters=spec["em_iters"]))
    em_seconds = float(sum(trace.seconds))
    dataset = spec["dataset"]
    seed = spec["init_seed"]
    n = spec["n"]
    steps = np.diff(trace.elbo_bits) if trace.iters > 1 else np.zeros(1)
    rows = [
        BenchmarkRow(dataset, n, seed, "first_elbo_bits", trace.elbo_bits[0], em_seconds),
        BenchmarkRow(dataset, n, seed, "final_elbo_bits", trace.elbo_bits[-1], em_seconds),
        BenchmarkRow(dataset, n, seed, "iterations", float(trace.iters), em_seconds),
        BenchmarkRow(dataset, n, seed, "worst_elbo_step", float(steps.min()), em_seconds),
        BenchmarkRow(dataset, n, seed, "converged", float(trace.converged), em_seconds),
        BenchmarkRow(dataset, n, seed, "init_seconds", init_seconds, init_seconds),
        BenchmarkRow(dataset, n, seed, "em_seconds", em_seconds, em_seconds),
        BenchmarkRow(
            dataset, n, seed, "total_seconds", init_seconds + em_seconds,
            init_seconds + em_seconds,
        ),
    ]
    return rows


_CELL_RUNNERS = {
    "recovery": _cell_recovery,
    "momconv": _cell_momconv,
    "spectrum": _cell_spectrum,
    "runtime": _cell_runtime,
    "em": _cell_em,
}


def _run_cell(spec: dict):
    """Execute one cell, trapping domain errors so the sweep continues."""
    try:
        return _CELL_RUNNERS[spec["kind"]](spec), None
    except (BestLDSError, np.linalg.LinAlgError) as exc:
        label = f"{spec['dataset']} n={spec['n']} seed={spec.get('seed')}"
        return [], f"{label}: {type(exc).__name__}: {exc}"


def _expand_cells(mode, preset, n_grid, repeats, k, p, seed, n_random, em_iters, k_grid):
    cells = []
    if mode in ("recovery-curves", "ablation-nonunit", "ablation-momconv", "runtime"):
        suffix = "-nonunit" if mode == "ablation-nonunit" else ""
        kind = {
            "recovery-curves": "recovery",
            "ablation-nonunit": "recovery",
            "ablation-momconv": "momconv",
            "runtime": "runtime",
        }[mode]
        for n in n_grid:
            for rep in range(repeats):
                cells.append(
                    {
                        "kind": kind,
                        "dataset": preset + suffix,
                        "preset": preset,
                        "preset_seed": seed,
                        "unit_diag_z": False if mode == "ablation-nonunit" else None,
                        "n": int(n),
                        "seed": seed + 1 + rep,
                        "k": k,
                        "p": p,
                    }
                )
    elif mode == "svd-spectrum":
        for depth in k_grid:
            cells.append(
                {
                    "kind": "spectrum",
                    "dataset": preset,
                    "preset": preset,
                    "preset_seed": seed,
                    "n": int(n_grid[0]),
                    "seed": seed + 1,
                    "k": int(depth),
                }
            )
    elif mode == "em-comparison":
        inits = [("random", seed + 100 + i) for i in range(n_random)]
        inits += [("gaussian", seed + 1), ("bestlds", seed + 1)]
        for init, init_seed in inits:
            cells.append(
                {
                    "kind": "em",
                    "dataset": f"{preset}-{init}",
                    "preset": preset,
                    "preset_seed": seed,
                    "n": int(n_grid[0]),
                    "seed": seed + 1,
                    "init": init,
                    "init_seed": init_seed,
                    "k": k,
                    "em_iters": em_iters,
                }
            )
    else:
        raise ConfigError(f"unknown benchmark mode {mode!r}; choices are {MODES}")
    return cells


def run_benchmark(
    mode: str,
    preset: str = "B",
    n_grid: tuple[int, ...] = (1000, 4000, 16000),
    repeats: int = 3,
    k: int = 4,
    p: int | None = None,
    seed: int = 0,
    workers: int = 1,
    n_random: int = 5,
    em_iters: int = 25,
    k_grid: tuple[int, ...] = (4, 7, 10),
) -> BenchmarkReport:
    """Expand the mode into cells, run them, and collect a report.

    p defaults to the preset's true latent dimension. workers > 1 runs
    cells in separate processes; results are collected in submission
    order either way, so reports are reproducible for a fixed seed.
    """
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    if not n_grid:
        raise ConfigError("n_grid must contain at least one size")
    if p is None:
        true, _ = make_preset(preset, seed)
        p = true.p

    cells = _expand_cells(
        mode, preset, n_grid, repeats, k, p, seed, n_random, em_iters, k_grid
    )
    config = {
        "mode": mode,
        "preset": preset,
        "n_grid": [int(n) for n in n_grid],
        "repeats": repeats,
        "k": k,
        "p": p,
        "seed": seed,
        "workers": workers,
        "n_random": n_random,
        "em_iters": em_iters,
        "k_grid": [int(v) for v in k_grid],
    }
    report = BenchmarkReport(mode=mode, config=config)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(spec) for spec in cells]

    for rows, failure in outcomes:
        report.rows.extend(rows)
        if failure is not None:
            report.failures.append(failure)
    return report
