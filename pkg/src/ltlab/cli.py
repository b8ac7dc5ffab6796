"""Command line driver.

Exit codes: 0 success, 2 configuration or input-file error, 3 numerical
failure. LTLAB_OUT_ROOT overrides the artifact root and LTLAB_THREADS caps
the BLAS thread count (applied before numpy loads).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _setup_threads() -> None:
    value = os.environ.get("LTLAB_THREADS")
    if value:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltlab",
        description="Long-tailed classification laboratory: generate data, "
        "train group-softmax and metric-learning heads, and evaluate them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic long-tailed dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--num-categories", type=int, default=60)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--zipf-exponent", type=float, default=1.5)
    p.add_argument("--max-count", type=int, default=2000)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--head-sigma", type=float, default=1.0)
    p.add_argument("--tail-sigma", type=float, default=0.25)
    p.add_argument("--nesting-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("census", help="per-class counts and frequency tags")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--rare-max", type=int, default=10)
    p.add_argument("--common-max", type=int, default=100)
    p.add_argument("--json", dest="as_json", action="store_true")
    p.set_defaults(func=_cmd_census)

    p = sub.add_parser("run", help="execute a run or grid config into an artifact dir")
    p.add_argument("config", help="config path or bundled preset name")
    p.add_argument("--out-root", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("train", help="alias of run: train per config and evaluate")
    p.add_argument("config")
    p.add_argument("--out-root", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="evaluate a saved head against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--head", required=True)
    p.add_argument("--partition", default=None)
    p.add_argument("--centers", default=None)
    p.add_argument("--method", choices=("auto", "softmax", "bags", "knn"), default="auto")
    p.add_argument("--squared-distance", action="store_true")
    p.add_argument("--rare-max", type=int, default=10)
    p.add_argument("--common-max", type=int, default=100)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("taunorm", help="tau-normalize a saved head")
    p.add_argument("--head", required=True)
    p.add_argument("--partition", default=None)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_taunorm)

    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=("tau", "lambda", "gamma", "beta", "bins"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out-root", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="merge reports with deltas vs the first")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def _cmd_generate(args) -> int:
    from .data import GeneratorConfig, generate_synthetic, save_dataset

    cfg = GeneratorConfig(
        num_categories=args.num_categories,
        feature_dim=args.feature_dim,
        zipf_exponent=args.zipf_exponent,
        max_count=args.max_count,
        min_count=args.min_count,
        head_sigma=args.head_sigma,
        tail_sigma=args.tail_sigma,
        nesting_fraction=args.nesting_fraction,
        seed=args.seed,
    )
    ds = generate_synthetic(cfg)
    save_dataset(ds, args.out, format=args.format)
    print(f"wrote {ds.n} samples x {ds.dim} dims, {ds.num_categories} classes to {args.out}")
    return 0


def _cmd_census(args) -> int:
    from .data import census, load_dataset

    ds = load_dataset(args.data, format=args.format)
    cen = census(ds, (args.rare_max, args.common_max))
    if args.as_json:
        print(json.dumps({"counts": cen.counts.tolist(), "tags": cen.group_tags}))
    else:
        print(f"{'class':>6} {'count':>8} tag")
        for k, (count, tag) in enumerate(zip(cen.counts, cen.group_tags)):
            print(f"{k:>6} {int(count):>8} {tag}")
    return 0


def _cmd_run(args) -> int:
    from .runner import run

    run_dir = run(args.config, out_root=args.out_root)
    print(f"artifacts in {run_dir}")
    return 0


def _cmd_eval(args) -> int:
    from pathlib import Path

    import numpy as np

    from . import evaluate, inference
    from .binning import load_partition
    from .classifier import load_head
    from .data import census, load_dataset
    from .errors import ConfigError
    from .metric import load_center_bank

    ds = load_dataset(args.data, format=args.format)
    cen = census(ds, (args.rare_max, args.common_max))
    partition = load_partition(args.partition) if args.partition else None
    head = load_head(args.head, partition=partition)
    bank = load_center_bank(args.centers) if args.centers else None

    method = args.method
    if method == "auto":
        method = "bags" if head.layout == "bags" else ("knn" if bank is not None else "softmax")
    if method == "bags":
        if partition is None:
            raise ConfigError("--method bags needs --partition")
        scores = inference.predict_bags(head, partition, ds.features)
    elif method == "knn":
        if bank is None:
            raise ConfigError("--method knn needs --centers")
        scores = inference.predict_knn(bank, ds.features, squared=args.squared_distance)
    else:
        scores = inference.predict_softmax(head, ds.features)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = inference.predicted_labels(scores)
    acc = evaluate.per_class_accuracy(pred, ds.labels, ds.num_categories)
    report = evaluate.group_report(acc, cen)
    rows = evaluate.report_rows(report, config_hash="", seed=-1)
    payload = {
        "format": "ltlab-report",
        "version": 1,
        "config_hash": "",
        "seed": -1,
        "metrics": report,
        "extras": {},
        "per_class_accuracy": [None if np.isnan(a) else float(a) for a in acc],
        "rows": rows,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out_dir / "report.txt").write_text(evaluate.render_group_table({"eval": report}))
    inference.write_predictions_csv(out_dir / "predictions.csv", scores, ds.labels)
    print(evaluate.render_group_table({"eval": report}), end="")
    return 0


def _cmd_taunorm(args) -> int:
    from .binning import load_partition
    from .classifier import load_head, save_head, tau_normalize

    partition = load_partition(args.partition) if args.partition else None
    head = load_head(args.head, partition=partition)
    save_head(tau_normalize(head, args.tau), args.out)
    print(f"wrote tau={args.tau:g} normalized head to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from . import evaluate
    from .runner import sweep

    values = [float(v) for v in args.values.split(",") if v != ""]
    table = sweep(args.config, args.param, values, out_root=args.out_root)
    reports = {f"{args.param}={row['value']:g}": row for row in table["rows"]}
    print(evaluate.render_group_table(reports), end="")
    return 0


def _cmd_compare(args) -> int:
    from .runner import compare

    merged = compare(args.reports)
    text = json.dumps(merged, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_gradcheck(args) -> int:
    from .errors import NumericalError
    from .gradcheck import DEFAULT_TOLERANCE, run_all

    results = run_all(instances=args.instances, seed=args.seed)
    failed = []
    for name, err in results.items():
        status = "PASS" if err < DEFAULT_TOLERANCE else "FAIL"
        print(f"{status} {name}: max rel err {err:.3e} (tolerance {DEFAULT_TOLERANCE:g})")
        if err >= DEFAULT_TOLERANCE:
            failed.append(name)
    if failed:
        raise NumericalError(f"gradient check failed for: {', '.join(failed)}")
    return 0


def main(argv=None) -> int:
    _setup_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import ConfigError, DatasetFormatError, NumericalError

    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
