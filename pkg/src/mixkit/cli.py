"""``mixkit`` command line: data generation, benchmarks, optimization, evaluation, sweeps."""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .datagen import DatasetManifest, ManifestError, generate_dataset, load_manifest, read_dataset, write_dataset
from .experiments import (
    FAMILIES,
    THREADS_ENV,
    RunSettings,
    bench_mixit,
    evaluate_estimates,
    optimize_dataset,
    sweep,
    sweep_configs,
    worker_count,
)
from .mixit import DEFAULT_MAX_ASSIGNMENTS
from .optimizer import FINAL_STEP_FRACTION, INIT_NOISE_DB, SOURCE_MOMENT_AXES, LossConfig
from .wavio import WavFormatError, atomic_write_bytes, read_wav, write_wav

log = logging.getLogger("mixkit")

RESOLVED_CONFIG = "resolved_config.txt"
DECIMALS = 6


class CommandError(Exception):
    """A run that cannot complete; reported on stderr with exit code 1."""


def _format_number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        # fixed-point formatting never consults the locale
        return f"{value:.{DECIMALS}f}"
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return round(value, DECIMALS) if math.isfinite(value) else None
    return value


def render_csv(rows, columns) -> str:
    out = io.StringIO()
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(_format_number(row[c]) for c in columns) + "\n")
    return out.getvalue()


def render_json(rows, columns) -> str:
    payload = [{c: _json_value(row[c]) for c in columns} for row in rows]
    return json.dumps(payload, indent=2) + "\n"


def write_table(out_dir, stem, rows, columns, fmt) -> str:
    text = render_csv(rows, columns) if fmt == "csv" else render_json(rows, columns)
    path = os.path.join(out_dir, f"{stem}.{fmt}")
    atomic_write_bytes(path, text.encode("utf-8"))
    return path


def write_resolved_config(out_dir, args, extra=None):
    values = {k: v for k, v in vars(args).items() if k not in ("func",)}
    values["version"] = __version__
    values["threads"] = worker_count()
    values.update(extra or {})
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(_format_number(v) if not isinstance(v, str) else v for v in value)
        elif value is None:
            value = "none"
        else:
            value = _format_number(value) if not isinstance(value, str) else value
        lines.append(f"{key} = {value}")
    atomic_write_bytes(os.path.join(out_dir, RESOLVED_CONFIG), ("\n".join(lines) + "\n").encode("utf-8"))


def _manifest_extra(manifest: DatasetManifest) -> dict:
    extra = {"manifest_hash": manifest.hash()}
    for line in manifest.to_text().splitlines():
        key, value = (p.strip() for p in line.split("=", 1))
        extra[f"manifest.{key}"] = value
    return extra


def _optimizer_extra() -> dict:
    return {"optimizer.beta1": 0.9, "optimizer.beta2": 0.999,
            "optimizer.final_step_fraction": FINAL_STEP_FRACTION,
            "optimizer.moment_axes": SOURCE_MOMENT_AXES, "optimizer.init_noise_db": INIT_NOISE_DB}


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return values


def _cap(text):
    if text.lower() in ("none", "inf", "unlimited"):
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("cap must be positive")
    return value


def _existing_file(text):
    if not os.path.isfile(text):
        raise argparse.ArgumentTypeError(f"manifest {text!r} does not exist")
    return text


def _load_dataset(args):
    if args.data:
        return read_dataset(args.data)
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest = dataclasses.replace(manifest, seed=args.seed)
    return generate_dataset(manifest)


def _run_seed(args, dataset):
    return dataset.manifest.seed if args.seed is None else args.seed


def _loss_config(args, n_sources=None) -> LossConfig:
    return LossConfig(
        n_sources=n_sources if n_sources is not None else args.m, snr_max_db=args.snr_max_db,
        weight_l1=args.weight_l1, weight_l1l2=args.weight_l1l2, weight_cov=args.weight_cov,
        weight_ce=args.weight_ce, weight_cos=args.weight_cos, aggregator=args.aggregator,
        mixit_method=args.mixit_method, max_assignments=args.max_assignments,
    )


def cmd_gen_data(args):
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest = dataclasses.replace(manifest, seed=args.seed)
    dataset = generate_dataset(manifest)
    digest = write_dataset(args.out, dataset)
    write_resolved_config(args.out, args, _manifest_extra(manifest))
    log.info("wrote %d eval and %d mom examples to %s", len(dataset.eval), len(dataset.mom), args.out)
    print(digest)


BENCH_COLUMNS = ["m", "n", "trials", "exhaustive_feasible", "exhaustive_mean_s", "exhaustive_median_s",
                 "efficient_mean_s", "efficient_median_s", "speedup", "agreement", "mean_gap_db", "min_gap_db"]


def cmd_bench_mixit(args):
    rows = bench_mixit(args.m, n_refs=args.n, trials=args.trials, seed=args.seed or 0, length=args.length,
                       separable=not args.random, max_assignments=args.max_assignments)
    table = [{**dataclasses.asdict(r), "speedup": r.speedup} for r in rows]
    os.makedirs(args.out, exist_ok=True)
    path = write_table(args.out, "bench_mixit", table, BENCH_COLUMNS, args.format)
    write_resolved_config(args.out, args)
    for r in rows:
        if not r.exhaustive_feasible:
            log.warning("M=%d: exhaustive search infeasible under cap %s", r.m, args.max_assignments)
    print(path)


def _estimate_dir(root, split, example_id):
    return os.path.join(root, split, example_id)


def cmd_optimize(args):
    dataset = _load_dataset(args)
    cfg = _loss_config(args)
    settings = RunSettings(steps=args.steps, step_size=args.step_size, seed=_run_seed(args, dataset))
    estimates = optimize_dataset(dataset, cfg, settings, worker_count())
    root = os.path.join(args.out, "estimates")
    sr = dataset.manifest.sample_rate
    for (split, example_id), sources in estimates.items():
        for i, s in enumerate(sources):
            write_wav(os.path.join(_estimate_dir(root, split, example_id), f"estimate_{i}.wav"), s, sr)
    write_resolved_config(args.out, args, {**_manifest_extra(dataset.manifest), **_optimizer_extra()})
    log.info("wrote estimates for %d examples", len(estimates))
    print(root)


def _read_estimates(root, dataset):
    found = {}
    keys = [("mom", ex.example_id) for ex in dataset.mom] + [("eval", ex.example_id) for ex in dataset.eval]
    for split, example_id in keys:
        d = _estimate_dir(root, split, example_id)
        if not os.path.isdir(d):
            continue
        stack = []
        i = 0
        while os.path.exists(os.path.join(d, f"estimate_{i}.wav")):
            w, sr = read_wav(os.path.join(d, f"estimate_{i}.wav"))
            if sr != dataset.manifest.sample_rate:
                raise WavFormatError(f"{d}: sample rate {sr} != {dataset.manifest.sample_rate}")
            stack.append(w)
            i += 1
        if stack:
            found[(split, example_id)] = np.stack(stack)
    if not found:
        raise CommandError(f"no estimates found under {root}")
    return found


EXAMPLE_COLUMNS = ["split", "example_id", "n_sources", "msi_db", "one_s_db", "momi_db", "active_sources"]
SUMMARY_COLUMNS = ["msi_db", "one_s_db", "momi_db", "selection_score", "mean_active_sources",
                   "n_msi", "n_one_s", "n_momi"]


def cmd_eval(args):
    dataset = _load_dataset(args)
    cfg = _loss_config(args)
    if args.estimates:
        estimates = _read_estimates(args.estimates, dataset)
    else:
        settings = RunSettings(steps=args.steps, step_size=args.step_size, seed=_run_seed(args, dataset))
        estimates = optimize_dataset(dataset, cfg, settings, worker_count())
    rows, report = evaluate_estimates(dataset, estimates, cfg)
    os.makedirs(args.out, exist_ok=True)
    write_table(args.out, "examples", rows, EXAMPLE_COLUMNS, args.format)
    path = write_table(args.out, "summary", [report.as_dict()], SUMMARY_COLUMNS, args.format)
    write_resolved_config(args.out, args, {**_manifest_extra(dataset.manifest), **_optimizer_extra()})
    print(path)


SWEEP_COLUMNS = ["family", "weight", "n_sources", "msi_db", "one_s_db", "momi_db", "selection_score",
                 "mean_active_sources", "n_msi", "n_one_s", "best"]


def cmd_sweep(args):
    if not args.weights:
        raise CommandError("sweep needs at least one weight")
    dataset = _load_dataset(args)
    configs = sweep_configs(args.family, args.weights, args.m, _loss_config(args, n_sources=args.m[0]))
    settings = RunSettings(steps=args.steps, step_size=args.step_size, seed=_run_seed(args, dataset))
    rows = sweep(configs, dataset, settings, worker_count())
    os.makedirs(args.out, exist_ok=True)
    path = write_table(args.out, "sweep", rows, SWEEP_COLUMNS, args.format)
    best = next(r for r in rows if r["best"])
    best_cfg = next(cfg for (_, cfg), r in zip(configs, rows) if r is best)
    lines = [f"family = {best['family']}"]
    lines += [f"{k} = {_format_number(v)}" for k, v in sorted(dataclasses.asdict(best_cfg).items())]
    lines += [f"selection_score = {_format_number(best['selection_score'])}"]
    atomic_write_bytes(os.path.join(args.out, "best_config.txt"), ("\n".join(lines) + "\n").encode("utf-8"))
    write_resolved_config(args.out, args, {**_manifest_extra(dataset.manifest), **_optimizer_extra()})
    print(path)


def _add_data_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory written by gen-data")
    src.add_argument("--manifest", type=_existing_file, help="manifest to generate the dataset in memory")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the manifest seed and seeds the optimizer (default: manifest seed)")


def _add_loss_args(p, m_type=int, m_default=8):
    p.add_argument("--m", type=m_type, default=m_default, help="number of estimated sources")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=1e-2)
    p.add_argument("--snr-max-db", type=float, default=30.0)
    for name in ("l1", "l1l2", "cov", "ce", "cos"):
        p.add_argument(f"--weight-{name}", type=float, default=0.0)
    p.add_argument("--aggregator", choices=("or", "xor"), default="or")
    p.add_argument("--mixit-method", choices=("auto", "exhaustive", "efficient"), default="auto")
    p.add_argument("--max-assignments", type=_cap, default=DEFAULT_MAX_ASSIGNMENTS,
                   help="exhaustive search cap on N**M ('none' lifts it)")


def _add_out_args(p, with_format=True):
    p.add_argument("--out", required=True, help="output directory")
    if with_format:
        p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixkit", description=__doc__,
        epilog=f"Set {THREADS_ENV}=N to optimize examples in N worker processes (default 1).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--manifest", type=_existing_file, required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the manifest seed")
    _add_out_args(p, with_format=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("bench-mixit", help="time exhaustive against efficient assignment")
    p.add_argument("--m", type=_int_list, default=[2, 4, 8, 16], help="comma-separated source counts")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random", action="store_true", help="unstructured instances instead of separable ones")
    p.add_argument("--max-assignments", type=_cap, default=DEFAULT_MAX_ASSIGNMENTS)
    _add_out_args(p)
    p.set_defaults(func=cmd_bench_mixit)

    p = sub.add_parser("optimize", help="optimize source estimates for a corpus")
    _add_data_args(p)
    _add_loss_args(p)
    _add_out_args(p, with_format=False)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="score estimates (or optimize then score)")
    _add_data_args(p)
    _add_loss_args(p)
    p.add_argument("--estimates", help="directory written by optimize; omitted means optimize now")
    _add_out_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one or more loss weights")
    _add_data_args(p)
    _add_loss_args(p, m_type=_int_list, m_default=[8])
    p.add_argument("--family", action="append", choices=sorted(FAMILIES),
                   help="loss family to sweep (repeatable; default l1_l2)")
    p.add_argument("--weights", type=_float_list, required=True, help="comma-separated weights")
    _add_out_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "family", None) is None and args.command == "sweep":
        args.family = ["l1_l2"]
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        worker_count()
        args.func(args)
    except (CommandError, ManifestError, WavFormatError, ValueError, OSError) as exc:
        print(f"mixkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
