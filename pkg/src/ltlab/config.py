"""Versioned JSON run configuration: strict schema, default resolution,
and canonical hashing.

Unknown keys are errors (reported with their dotted path) so a typo never
silently falls back to a default. A config is either a single run or a
grid of named variants over a shared base.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

from .errors import ConfigError

CONFIG_VERSION = 1


class _Leaf:
    def __init__(self, default, types, choices=None):
        self.default = default
        self.types = types
        self.choices = choices


_BODY_SCHEMA = {
    "seed": _Leaf(0, (int,)),
    "dataset": {
        "source": _Leaf("synthetic", (str,), ("synthetic", "file")),
        "path": _Leaf(None, (str, type(None))),
        "format": _Leaf("binary", (str,), ("binary", "csv")),
        "num_categories": _Leaf(60, (int,)),
        "feature_dim": _Leaf(32, (int,)),
        "zipf_exponent": _Leaf(1.5, (int, float)),
        "max_count": _Leaf(2000, (int,)),
        "min_count": _Leaf(5, (int,)),
        "head_sigma": _Leaf(1.0, (int, float)),
        "tail_sigma": _Leaf(0.25, (int, float)),
        "nesting_fraction": _Leaf(0.7, (int, float)),
        "seed": _Leaf(None, (int, type(None))),
        "sample_cap": _Leaf(1_000_000, (int,)),
    },
    "census": {
        "rare_max": _Leaf(10, (int,)),
        "common_max": _Leaf(100, (int,)),
    },
    "partition": {
        "strategy": _Leaf("none", (str,), ("none", "fixed", "clustered", "random")),
        "thresholds": _Leaf([0, 10, 100, 1000], (list,)),
        "k": _Leaf(4, (int,)),
        "seed": _Leaf(None, (int, type(None))),
        "template_thresholds": _Leaf([0, 10, 100, 1000], (list,)),
    },
    "train": {
        "loss": _Leaf("ce", (str,), ("ce", "bags", "center", "lmcl", "ece")),
        "bags_mode": _Leaf("plain", (str,), ("plain", "weighted", "focal", "hybrid")),
        "epochs": _Leaf(30, (int,)),
        "batch_size": _Leaf(32, (int,)),
        "learning_rate": _Leaf(0.3, (int, float)),
        "momentum": _Leaf(0.9, (int, float)),
        "gamma": _Leaf(2.0, (int, float)),
        "others_beta": _Leaf(8.0, (int, float)),
        "center_lambda": _Leaf(0.01, (int, float)),
        "center_alpha": _Leaf(0.5, (int, float)),
        "cosine_scale": _Leaf(30.0, (int, float)),
        "cosine_margin": _Leaf(0.35, (int, float)),
        "ece_temperature": _Leaf(1.0, (int, float)),
        "init_scale": _Leaf(0.01, (int, float)),
        "background_points": _Leaf(0, (int,)),
    },
    "tau": _Leaf(0.0, (int, float)),
    "inference": {
        "method": _Leaf("auto", (str,), ("auto", "softmax", "bags", "knn")),
        "squared_distance": _Leaf(False, (bool,)),
    },
}


def _defaults(schema: dict) -> dict:
    out = {}
    for key, node in schema.items():
        out[key] = copy.deepcopy(node.default) if isinstance(node, _Leaf) else _defaults(node)
    return out


def _apply(schema: dict, resolved: dict, user: dict, path: str) -> None:
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        node = schema[key]
        if isinstance(node, _Leaf):
            if isinstance(value, bool) and bool not in node.types:
                raise ConfigError(f"{here}: unexpected boolean")
            if not isinstance(value, node.types):
                raise ConfigError(f"{here}: expected {node.types}, got {type(value).__name__}")
            if node.choices is not None and value not in node.choices:
                raise ConfigError(f"{here}: must be one of {node.choices}, got {value!r}")
            resolved[key] = value
        else:
            _apply(node, resolved[key], value, here)


def _check_version(user: dict) -> None:
    version = user.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")


def deep_merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_body(user: dict) -> dict:
    resolved = _defaults(_BODY_SCHEMA)
    _apply(_BODY_SCHEMA, resolved, user, "")
    if resolved["dataset"]["source"] == "file" and not resolved["dataset"]["path"]:
        raise ConfigError("dataset.path is required when dataset.source is 'file'")
    if resolved["train"]["loss"] == "bags" and resolved["partition"]["strategy"] == "none":
        raise ConfigError("train.loss 'bags' needs a partition strategy")
    return resolved


def resolve_config(user: dict) -> dict:
    """Resolve a raw config dict into its fully-defaulted form."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    _check_version(user)
    kind = user.get("kind", "single")
    if kind == "single":
        body_keys = {k: v for k, v in user.items() if k not in ("version", "kind", "name")}
        resolved = {
            "version": CONFIG_VERSION,
            "kind": "single",
            "name": _expect_name(user.get("name")),
            **resolve_body(body_keys),
        }
    elif kind == "grid":
        extra = set(user) - {"version", "kind", "name", "base", "variants"}
        if extra:
            raise ConfigError(f"unknown config key: {sorted(extra)[0]}")
        base = resolve_body(user.get("base", {}))
        variants = user.get("variants")
        if not isinstance(variants, list) or not variants:
            raise ConfigError("a grid config needs a non-empty 'variants' list")
        out_variants = []
        seen = set()
        for i, variant in enumerate(variants):
            if not isinstance(variant, dict) or set(variant) - {"name", "overrides"}:
                raise ConfigError(f"variants[{i}] must have only 'name' and 'overrides'")
            name = variant.get("name")
            if not isinstance(name, str) or not name:
                raise ConfigError(f"variants[{i}] needs a non-empty name")
            if name in seen:
                raise ConfigError(f"duplicate variant name {name!r}")
            seen.add(name)
            merged = deep_merge(
                user.get("base", {}), variant.get("overrides", {})
            )
            out_variants.append({"name": name, "config": resolve_body(merged)})
        resolved = {
            "version": CONFIG_VERSION,
            "kind": "grid",
            "name": _expect_name(user.get("name")),
            "base": base,
            "variants": out_variants,
        }
    else:
        raise ConfigError(f"kind must be 'single' or 'grid', got {kind!r}")
    if resolved["name"] is None:
        prefix = "run" if kind == "single" else "grid"
        resolved["name"] = f"{prefix}-{config_hash(resolved)[:12]}"
    return resolved


def _expect_name(name):
    if name is not None and (not isinstance(name, str) or not name):
        raise ConfigError("name must be a non-empty string")
    return name


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()


def load_config(path_or_name) -> dict:
    """Read a config file; bare names resolve against the bundled presets."""
    text = None
    path = str(path_or_name)
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        if "/" not in path and not path.endswith(".json"):
            ref = resources.files("ltlab") / "configs" / f"{path}.json"
            if ref.is_file():
                text = ref.read_text()
    if text is None:
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return raw


def schema_leaf_paths() -> list[str]:
    """Dotted paths of every body hyperparameter (for coverage audits)."""
    paths = []

    def walk(schema, prefix):
        for key, node in schema.items():
            here = f"{prefix}.{key}" if prefix else key
            if isinstance(node, _Leaf):
                paths.append(here)
            else:
                walk(node, here)

    walk(_BODY_SCHEMA, "")
    return paths
