"""Command-line entry point.

Subcommands: simulate, fit, benchmark, impulse, predict. Every command
writes its outputs next to a ``<out>.meta.json`` sidecar embedding the
full configuration, so any artifact can be regenerated from its sidecar
alone. Nothing here is stochastic beyond the seeds spelled out in the
configuration; rerunning a command reproduces its files byte for byte.

Exit codes: 0 success, 2 configuration or validation problems,
3 numerical or data-quality failures, 4 I/O failures.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .benchmark import MODES, run_benchmark
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateChannelError,
    NumericalError,
    ParameterError,
    StabilityError,
)
from .laplace_em import (
    EMConfig,
    bestlds_init,
    gaussian_init,
    random_init,
    run_em,
)
from .metrics import error_report, impulse_response, log_evidence, predict_choices
from .model import (
    InputSpec,
    SystemParams,
    TimeSeries,
    make_preset,
    simulate,
    simulate_trials,
)
from .moments import HankelConfig, build_hankel_moments, convert
from .ssid import fit_bestlds, gauss_baseline, hankel_spectrum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_CONFIG_ERRORS = (ConfigError, ParameterError)
_NUMERIC_ERRORS = (
    NumericalError,
    ConvergenceError,
    DegenerateChannelError,
    StabilityError,
    np.linalg.LinAlgError,
)


def _write_meta(prefix: str, command: str, config: dict) -> None:
    with open(f"{prefix}.meta.json", "w") as fh:
        json.dump(
            {"command": command, "config": config, "version": __version__},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def _config_from(args: argparse.Namespace) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _load_params(path: str) -> SystemParams:
    """Read system parameters from a params, fit-result, or EM-trace JSON."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if isinstance(doc, dict) and isinstance(doc.get("params"), dict):
        doc = doc["params"]
    try:
        return SystemParams.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(
            f"{path} does not contain a system-parameters document ({exc})"
        ) from None


def cmd_simulate(args) -> int:
    if args.params_file:
        params = SystemParams.load(args.params_file)
        inputs = InputSpec(variance=args.input_variance)
    else:
        params, inputs = make_preset(args.preset, args.seed)
    if args.trials > 1:
        ts = simulate_trials(params, inputs, args.n, args.trials, seed=args.seed + 1)
    else:
        ts = simulate(params, inputs, n_steps=args.n, seed=args.seed + 1)

    ts.to_csv(f"{args.out}.csv")
    params.save(f"{args.out}.params.json")
    _write_meta(args.out, "simulate", _config_from(args))
    print(f"wrote {args.out}.csv ({ts.n} steps, {ts.m} inputs, {ts.q} channels)")
    return EXIT_OK


def cmd_fit(args) -> int:
    ts = TimeSeries.from_csv(args.data)
    cfg = HankelConfig(k=args.k, pooled=not args.unpooled)

    if args.spectrum_only:
        stacked = build_hankel_moments(ts, cfg)
        values = hankel_spectrum(convert(stacked).factor, cfg, ts.q, ts.m)
        with open(f"{args.out}.spectrum.json", "w") as fh:
            json.dump(
                {"k": args.k, "singular_values": [float(v) for v in values]},
                fh,
                indent=2,
            )
            fh.write("\n")
        _write_meta(args.out, "fit", _config_from(args))
        print(f"wrote {args.out}.spectrum.json")
        return EXIT_OK

    if args.p is None:
        raise ConfigError("--p is required unless --spectrum-only is given")
    result = fit_bestlds(ts, cfg, args.p)
    result.save(f"{args.out}.ssid.json")
    written = [f"{args.out}.ssid.json"]

    if args.baseline:
        gauss_baseline(ts, cfg, args.p).save(f"{args.out}.baseline.json")
        written.append(f"{args.out}.baseline.json")

    if args.em != "none":
        if args.em == "bestlds":
            start = result.params
        elif args.em == "gaussian":
            start = gaussian_init(ts, cfg, args.p)
        else:
            start = random_init(args.p, ts.q, ts.m, seed=args.em_seed)
        trace = run_em(start, ts, EMConfig(max_iters=args.em_iters))
        trace.save(f"{args.out}.em.json")
        trace.to_csv(f"{args.out}.em.csv")
        written += [f"{args.out}.em.json", f"{args.out}.em.csv"]

    if args.true_params:
        true = SystemParams.load(args.true_params)
        fitted = result.params
        error_report(true, fitted).save(f"{args.out}.report.json")
        written.append(f"{args.out}.report.json")

    _write_meta(args.out, "fit", _config_from(args))
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    report = run_benchmark(
        args.mode,
        preset=args.preset,
        n_grid=tuple(args.n_grid),
        repeats=args.repeats,
        k=args.k,
        p=args.p,
        seed=args.seed,
        workers=args.workers,
        n_random=args.n_random,
        em_iters=args.em_iters,
        k_grid=tuple(args.k_grid),
    )
    report.save_rows_csv(f"{args.out}.rows.csv")
    report.save_summary(f"{args.out}.summary.json")
    _write_meta(args.out, "benchmark", _config_from(args))
    print(
        f"{args.mode}: {len(report.rows)} rows, "
        f"{len(report.failures)} failed cells"
    )
    for failure in report.failures:
        print(f"  failed: {failure}", file=sys.stderr)
    return EXIT_OK


def cmd_impulse(args) -> int:
    params = _load_params(args.params)
    with open(f"{args.out}.impulse.csv", "w") as fh:
        header = ["input_dim", "step"] + [f"z_{i}" for i in range(params.q)]
        fh.write(",".join(header) + "\n")
        for j in range(params.m):
            trace = impulse_response(params, j, args.horizon)
            for t in range(args.horizon):
                row = [str(j), str(t)] + ["%.17g" % v for v in trace[:, t]]
                fh.write(",".join(row) + "\n")
    _write_meta(args.out, "impulse", _config_from(args))
    print(f"wrote {args.out}.impulse.csv")
    return EXIT_OK


def _contiguous_folds(n_trials: int, folds: int) -> list[list[int]]:
    if folds < 1:
        raise ConfigError("--folds must be at least 1")
    if folds > n_trials:
        raise ConfigError(
            f"cannot split {n_trials} trial(s) into {folds} folds"
        )
    blocks = np.array_split(np.arange(n_trials), folds)
    return [list(map(int, block)) for block in blocks]


def _subset_trials(ts: TimeSeries, trial_ids: list[int]) -> TimeSeries:
    segments = ts.segments()
    starts, u_parts, y_parts = [], [], []
    offset = 0
    for tid in trial_ids:
        lo, hi = segments[tid]
        starts.append(offset)
        u_parts.append(ts.u[lo:hi])
        y_parts.append(ts.y[lo:hi])
        offset += hi - lo
    return TimeSeries(
        u=np.vstack(u_parts), y=np.vstack(y_parts), trial_starts=tuple(starts)
    )


def _perseverative_accuracy(ts: TimeSeries, stay_prob: float = 0.7) -> float:
    """Expected accuracy of repeating the previous choice with fixed odds."""
    total = 0.0
    count = 0
    for lo, hi in ts.segments():
        block = ts.y[lo:hi]
        total += 0.5 * block.shape[1]
        count += block.shape[1]
        same = block[1:] == block[:-1]
        total += np.where(same, stay_prob, 1.0 - stay_prob).sum()
        count += same.size
    return total / count


def cmd_predict(args) -> int:
    params = _load_params(args.params)
    ts = TimeSeries.from_csv(args.data)
    folds = _contiguous_folds(ts.n_trials, args.folds)

    min_steps = 2 * args.k
    segments = ts.segments()
    for i, block in enumerate(folds):
        steps = sum(hi - lo for lo, hi in (segments[t] for t in block))
        if steps < min_steps:
            raise ConfigError(
                f"fold {i} spans {steps} steps, smaller than 2k = {min_steps}; "
                "use fewer folds or a shallower k"
            )

    fold_records = []
    y_hat = np.empty_like(ts.y)
    fold_of_step = np.empty(ts.n, dtype=int)
    for i, block in enumerate(folds):
        sub = _subset_trials(ts, block)
        pred, acc = predict_choices(params, sub, open_loop=args.open_loop)
        offset = 0
        for tid in block:
            lo, hi = segments[tid]
            y_hat[lo:hi] = pred[offset : offset + hi - lo]
            fold_of_step[lo:hi] = i
            offset += hi - lo
        fold_records.append(
            {
                "fold": i,
                "trials": block,
                "n_steps": int(sub.n),
                "accuracy": float(acc),
                "log_evidence_bits": float(log_evidence(params, sub)),
                "perseverative_accuracy": float(_perseverative_accuracy(sub)),
            }
        )

    with open(f"{args.out}.predictions.csv", "w") as fh:
        header = [f"y_hat_{i}" for i in range(ts.q)] + ["fold"]
        fh.write(",".join(header) + "\n")
        for t in range(ts.n):
            row = [str(int(v)) for v in y_hat[t]] + [str(fold_of_step[t])]
            fh.write(",".join(row) + "\n")

    pooled = float(np.mean(y_hat == ts.y))
    with open(f"{args.out}.accuracy.json", "w") as fh:
        json.dump(
            {
                "pooled_accuracy": pooled,
                "open_loop": bool(args.open_loop),
                "folds": fold_records,
            },
            fh,
            indent=2,
        )
        fh.write("\n")

    with open(f"{args.out}.trial_accuracy.csv", "w") as fh:
        fh.write("trial,accuracy\n")
        for tid, (lo, hi) in enumerate(segments):
            acc = float(np.mean(y_hat[lo:hi] == ts.y[lo:hi]))
            fh.write(f"{tid},{acc:.6f}\n")

    _write_meta(args.out, "predict", _config_from(args))
    print(
        f"wrote {args.out}.predictions.csv, {args.out}.accuracy.json, "
        f"{args.out}.trial_accuracy.csv (pooled accuracy {pooled:.4f})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bestlds",
        description="Subspace identification and Laplace-EM for binary-observation linear systems.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a dataset from a preset or saved system")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=list("ABCDEFG"))
    group.add_argument("--params-file", help="SystemParams JSON to simulate from")
    sim.add_argument("--n", type=int, required=True, help="steps per trial")
    sim.add_argument("--trials", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument(
        "--input-variance", type=float, default=1.0,
        help="input variance when simulating from --params-file",
    )
    sim.add_argument("--out", required=True, help="output path prefix")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit a system to a CSV record")
    fit.add_argument("--data", required=True, help="TimeSeries CSV (u_*, y_*, optional trial_id)")
    fit.add_argument("--k", type=int, default=4, help="Hankel depth")
    fit.add_argument("--p", type=int, default=None, help="latent dimension")
    fit.add_argument("--unpooled", action="store_true", help="per-coordinate window statistics")
    fit.add_argument("--spectrum-only", action="store_true", help="emit singular values and stop")
    fit.add_argument("--baseline", action="store_true", help="also fit the raw-values baseline")
    fit.add_argument(
        "--em", choices=["none", "bestlds", "gaussian", "random"], default="none",
        help="refine with EM from this initialization",
    )
    fit.add_argument("--em-iters", type=int, default=50)
    fit.add_argument("--em-seed", type=int, default=0)
    fit.add_argument("--true-params", default=None, help="JSON of the generating system, for an error report")
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    bench = sub.add_parser("benchmark", help="run a sweep and emit report CSV/JSON")
    bench.add_argument("--mode", choices=list(MODES), required=True)
    bench.add_argument("--preset", default="B", choices=list("ABCDEFG"))
    bench.add_argument("--n-grid", type=int, nargs="+", default=[1000, 4000, 16000])
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--k", type=int, default=4)
    bench.add_argument("--p", type=int, default=None)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--n-random", type=int, default=5)
    bench.add_argument("--em-iters", type=int, default=25)
    bench.add_argument("--k-grid", type=int, nargs="+", default=[4, 7, 10])
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_benchmark)

    imp = sub.add_parser("impulse", help="input-to-observation impulse traces")
    imp.add_argument("--params", required=True, help="SystemParams JSON")
    imp.add_argument("--horizon", type=int, default=50)
    imp.add_argument("--out", required=True)
    imp.set_defaults(func=cmd_impulse)

    pred = sub.add_parser("predict", help="one-step-ahead choice prediction")
    pred.add_argument("--params", required=True, help="SystemParams JSON")
    pred.add_argument("--data", required=True, help="TimeSeries CSV")
    pred.add_argument("--folds", type=int, default=1, help="contiguous trial folds")
    pred.add_argument("--k", type=int, default=4, help="depth used for the fold-size check")
    pred.add_argument("--open-loop", action="store_true", help="never condition on outcomes")
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
