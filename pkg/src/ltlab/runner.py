"""Experiment pipeline: build or load data, partition, train, normalize,
infer, evaluate, and write a self-describing artifact directory.

Every artifact is a pure function of the resolved config, so re-running a
config overwrites the directory with identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import binning, evaluate, inference
from .classifier import head_for_partition, new_head, save_head, tau_normalize
from .config import canonical_json, config_hash, load_config, resolve_config
from .data import Dataset, census, generate_synthetic, GeneratorConfig, load_dataset, save_dataset
from .errors import ConfigError
from .losses import class_weights
from .metric import CenterBank, save_center_bank
from .training import TrainConfig, train

INCOMPLETE_MARKER = "INCOMPLETE"
REPORT_FORMAT = "ltlab-report"
MANIFEST_FORMAT = "ltlab-manifest"
COMPARE_FORMAT = "ltlab-compare"

SWEEP_PARAMS = ("tau", "lambda", "gamma", "beta", "bins")


def output_root(explicit=None) -> Path:
    """Artifact root: explicit argument, LTLAB_OUT_ROOT, or ./runs."""
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get("LTLAB_OUT_ROOT", "runs"))


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _dataset_from_config(cfg: dict) -> Dataset:
    ds_cfg = cfg["dataset"]
    if ds_cfg["source"] == "file":
        return load_dataset(ds_cfg["path"], format=ds_cfg["format"])
    gen = GeneratorConfig(
        num_categories=ds_cfg["num_categories"],
        feature_dim=ds_cfg["feature_dim"],
        zipf_exponent=ds_cfg["zipf_exponent"],
        max_count=ds_cfg["max_count"],
        min_count=ds_cfg["min_count"],
        head_sigma=ds_cfg["head_sigma"],
        tail_sigma=ds_cfg["tail_sigma"],
        nesting_fraction=ds_cfg["nesting_fraction"],
        seed=cfg["seed"] if ds_cfg["seed"] is None else ds_cfg["seed"],
    )
    return generate_synthetic(gen, sample_cap=ds_cfg["sample_cap"])


def _partition_from_config(cfg: dict, cen) -> binning.GroupPartition | None:
    p_cfg = cfg["partition"]
    strategy = p_cfg["strategy"]
    if strategy == "none":
        return None
    if strategy == "fixed":
        return binning.partition_fixed(cen, p_cfg["thresholds"])
    if strategy == "clustered":
        return binning.partition_clustered(cen, p_cfg["k"])
    template = binning.partition_fixed(cen, p_cfg["template_thresholds"])
    seed = cfg["seed"] if p_cfg["seed"] is None else p_cfg["seed"]
    return binning.partition_random(cen, template, seed)


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        momentum=t["momentum"],
        seed=cfg["seed"],
        loss=t["loss"],
        bags_mode=t["bags_mode"],
        gamma=t["gamma"],
        others_beta=t["others_beta"],
        center_lambda=t["center_lambda"],
        center_alpha=t["center_alpha"],
        cosine_scale=t["cosine_scale"],
        cosine_margin=t["cosine_margin"],
        ece_temperature=t["ece_temperature"],
        background_points=t["background_points"],
    )


def _init_head(cfg: dict, ds: Dataset, partition):
    scale = cfg["train"]["init_scale"]
    if cfg["train"]["loss"] == "bags":
        return head_for_partition(partition, ds.dim, init_scale=scale, seed=cfg["seed"])
    return new_head(ds.num_categories, ds.dim, init_scale=scale, seed=cfg["seed"])


def _resolve_method(cfg: dict) -> str:
    method = cfg["inference"]["method"]
    if method != "auto":
        return method
    loss = cfg["train"]["loss"]
    if loss == "bags":
        return "bags"
    if loss == "lmcl":
        return "cosine"
    if loss == "ece":
        return "prototype"
    return "softmax"


def _scores(method: str, head, partition, bank, features, squared: bool) -> np.ndarray:
    if method == "bags":
        if partition is None:
            raise ConfigError("bags inference needs a partition")
        return inference.predict_bags(head, partition, features)
    if method == "knn":
        if bank is None:
            raise ConfigError("knn inference needs a center bank")
        return inference.predict_knn(bank, features, squared=squared)
    if method == "cosine":
        return inference.predict_softmax(tau_normalize(head, 1.0), features)
    if method == "prototype":
        proto = CenterBank(
            centers=head.weights, initialized=np.ones(head.rows, dtype=bool)
        )
        return inference.predict_knn(proto, features, squared=True)
    return inference.predict_softmax(head, features)


def evaluate_trained(cfg: dict, ds: Dataset, cen, partition, result) -> dict:
    """Inference plus metrics for a completed training; returns the report body."""
    features = result.features if result.features is not None else ds.features
    method = _resolve_method(cfg)
    head = result.head
    scores = _scores(
        method, head, partition, result.bank, features, cfg["inference"]["squared_distance"]
    )
    pred = inference.predicted_labels(scores)
    acc = evaluate.per_class_accuracy(pred, ds.labels, ds.num_categories)
    report = evaluate.group_report(acc, cen)
    extras = {}
    if head.layout in ("plain", "bags"):
        rho = evaluate.weight_norm_correlation(head, cen)
        if np.isfinite(rho):
            extras["weight_norm_spearman"] = rho
    if result.bank is not None:
        spread = evaluate.intra_class_spread(features, ds.labels, result.bank)
        extras["mean_intra_class_spread"] = evaluate.mean_spread(spread)
    return {
        "metrics": report,
        "extras": extras,
        "per_class_accuracy": [None if np.isnan(a) else float(a) for a in acc],
        "scores": scores,
        "predictions": pred,
    }


def _report_payload(cfg: dict, chash: str, body: dict) -> dict:
    rows = evaluate.report_rows(body["metrics"], chash, cfg["seed"])
    for metric, value in sorted(body["extras"].items()):
        rows.append(
            {"metric": metric, "group": "overall", "value": value,
             "config_hash": chash, "seed": cfg["seed"]}
        )
    return {
        "format": REPORT_FORMAT,
        "version": 1,
        "config_hash": chash,
        "seed": cfg["seed"],
        "metrics": body["metrics"],
        "extras": body["extras"],
        "per_class_accuracy": body["per_class_accuracy"],
        "rows": rows,
    }


def run_single(cfg: dict, run_dir: Path) -> dict:
    """Execute one resolved single config into run_dir; returns the report."""
    run_dir.mkdir(parents=True, exist_ok=True)
    marker = run_dir / INCOMPLETE_MARKER
    marker.write_text("run in progress or failed\n")

    chash = config_hash(cfg)
    ds = _dataset_from_config(cfg)
    save_dataset(ds, run_dir / "dataset.bin", format="binary")
    dataset_sha = hashlib.sha256((run_dir / "dataset.bin").read_bytes()).hexdigest()

    cen = census(ds, (cfg["census"]["rare_max"], cfg["census"]["common_max"]))
    partition = _partition_from_config(cfg, cen)
    files = {"dataset": "dataset.bin", "head": "head.bin", "report": "report.json",
             "history": "history.json", "predictions": "predictions.csv"}
    if partition is not None:
        binning.save_partition(partition, run_dir / "partition.json")
        files["partition"] = "partition.json"
        if cfg["train"]["loss"] == "bags" and cfg["train"]["bags_mode"] in ("weighted", "hybrid"):
            table = class_weights(cen, partition)
            _write_json(
                run_dir / "class_weights.json",
                {"final_weight": table.final_weight.tolist()},
            )
            files["class_weights"] = "class_weights.json"

    head_init = _init_head(cfg, ds, partition)
    result = train(ds, head_init, _train_config(cfg), partition=partition)
    if cfg["tau"] > 0:
        result.head = tau_normalize(result.head, cfg["tau"])
    save_head(result.head, run_dir / "head.bin")
    if result.bank is not None:
        save_center_bank(result.bank, run_dir / "centers.bin")
        files["centers"] = "centers.bin"

    body = evaluate_trained(cfg, ds, cen, partition, result)
    inference.write_predictions_csv(run_dir / "predictions.csv", body["scores"], ds.labels)
    report = _report_payload(cfg, chash, body)
    _write_json(run_dir / "report.json", report)
    (run_dir / "report.txt").write_text(
        evaluate.render_group_table({cfg["name"]: body["metrics"]})
    )
    _write_json(run_dir / "history.json", {"epochs": result.history})

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": cfg,
        "config_hash": chash,
        "dataset_sha256": dataset_sha,
        "files": files,
    }
    _write_json(run_dir / "manifest.json", manifest)
    marker.unlink()
    return report


def run(config_source, out_root=None) -> Path:
    """Run a config file, dict, or bundled preset name; returns the artifact dir."""
    raw = config_source if isinstance(config_source, dict) else load_config(config_source)
    cfg = resolve_config(raw)
    root = output_root(out_root)
    run_dir = root / cfg["name"]
    if cfg["kind"] == "single":
        run_single(cfg, run_dir)
        return run_dir

    run_dir.mkdir(parents=True, exist_ok=True)
    marker = run_dir / INCOMPLETE_MARKER
    marker.write_text("grid in progress or failed\n")
    reports = {}
    for variant in cfg["variants"]:
        sub = dict(variant["config"])
        sub["version"] = cfg["version"]
        sub["kind"] = "single"
        sub["name"] = variant["name"]
        run_single(sub, run_dir / variant["name"])
        reports[variant["name"]] = json.loads(
            (run_dir / variant["name"] / "report.json").read_text()
        )
    grid = {
        "format": COMPARE_FORMAT,
        "version": 1,
        "names": [v["name"] for v in cfg["variants"]],
        "rows": _merge_rows([reports[v["name"]] for v in cfg["variants"]],
                            [v["name"] for v in cfg["variants"]]),
    }
    _write_json(run_dir / "grid.json", grid)
    (run_dir / "grid.txt").write_text(
        evaluate.render_group_table({k: v["metrics"] for k, v in reports.items()})
    )
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "files": {"grid": "grid.json"},
    }
    _write_json(run_dir / "manifest.json", manifest)
    marker.unlink()
    return run_dir


_PARAM_PATHS = {
    "lambda": ("train", "center_lambda"),
    "gamma": ("train", "gamma"),
    "beta": ("train", "others_beta"),
}


def sweep(config_source, param: str, values, out_root=None) -> dict:
    """One run per value; tau sweeps reuse a single trained base head."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    raw = config_source if isinstance(config_source, dict) else load_config(config_source)
    cfg = resolve_config(raw)
    if cfg["kind"] != "single":
        raise ConfigError("sweep needs a single-run config")
    root = output_root(out_root)
    sweep_dir = root / f"{cfg['name']}-sweep-{param}"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    reports = {}
    if param == "tau":
        ds = _dataset_from_config(cfg)
        cen = census(ds, (cfg["census"]["rare_max"], cfg["census"]["common_max"]))
        partition = _partition_from_config(cfg, cen)
        result = train(ds, _init_head(cfg, ds, partition), _train_config(cfg), partition=partition)
        base_head = result.head
        for value in values:
            sub = json.loads(canonical_json(cfg))
            sub["tau"] = float(value)
            result.head = tau_normalize(base_head, float(value))
            body = evaluate_trained(sub, ds, cen, partition, result)
            report = _report_payload(sub, config_hash(sub), body)
            _write_json(sweep_dir / f"report_tau_{value:g}.json", report)
            reports[f"tau={value:g}"] = report
            rows.append({"param": "tau", "value": float(value), **body["metrics"]})
    else:
        for value in values:
            sub = json.loads(canonical_json(cfg))
            if param == "bins":
                sub["partition"] = _bins_override(sub["partition"], int(value))
            else:
                section, key = _PARAM_PATHS[param]
                sub[section][key] = float(value)
            sub["name"] = f"{cfg['name']}-{param}-{value:g}"
            report = run_single(resolve_config(sub), sweep_dir / f"{param}-{value:g}")
            reports[f"{param}={value:g}"] = report
            rows.append({"param": param, "value": float(value), **report["metrics"]})

    table = {
        "format": "ltlab-sweep",
        "version": 1,
        "param": param,
        "rows": rows,
    }
    _write_json(sweep_dir / "sweep.json", table)
    (sweep_dir / "sweep.txt").write_text(
        evaluate.render_group_table({k: v["metrics"] for k, v in reports.items()})
    )
    return table


def _bins_override(p_cfg: dict, value: int) -> dict:
    out = dict(p_cfg)
    if value == 4:
        out.update(strategy="fixed", thresholds=binning.DEFAULT_THRESHOLDS)
    elif value == 5:
        out.update(strategy="fixed", thresholds=binning.FIVE_BIN_THRESHOLDS)
    else:
        out.update(strategy="clustered", k=int(value))
    return out


def _merge_rows(reports: list[dict], names: list[str]) -> list[dict]:
    base_keys = [(r["metric"], r["group"]) for r in reports[0]["rows"]]
    merged = []
    for metric, group in base_keys:
        values = []
        for name, report in zip(names, reports):
            match = [
                r["value"] for r in report["rows"]
                if r["metric"] == metric and r["group"] == group
            ]
            values.append(match[0] if match else None)
        baseline = values[0]
        deltas = [
            None if (v is None or baseline is None) else v - baseline for v in values
        ]
        merged.append(
            {"metric": metric, "group": group, "names": names,
             "values": values, "deltas": deltas}
        )
    return merged


def compare(report_paths) -> dict:
    """Merge reports side by side with per-group deltas against the first."""
    if not report_paths:
        raise ConfigError("compare needs at least one report")
    reports = []
    for path in report_paths:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read report ({exc})") from None
        if payload.get("format") != REPORT_FORMAT or "rows" not in payload:
            raise ConfigError(f"{path}: not a report file")
        reports.append(payload)
    metric_groups = {(r["metric"], r["group"]) for r in reports[0]["rows"]}
    for i, report in enumerate(reports[1:], start=1):
        other = {(r["metric"], r["group"]) for r in report["rows"]}
        if other != metric_groups:
            raise ConfigError(
                f"{report_paths[i]}: report schema mismatch against {report_paths[0]}"
            )
    names = [str(p) for p in report_paths]
    return {
        "format": COMPARE_FORMAT,
        "version": 1,
        "names": names,
        "rows": _merge_rows(reports, names),
    }
