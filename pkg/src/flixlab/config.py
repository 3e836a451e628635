"""Experiment configuration: one JSON document describing data, features, model and training."""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .data import SplitPlan, SyntheticSpec
from .errors import ConfigError
from .features import Feature, FeatureRegistry, Metadata, featurize, LANGUAGE, SHARED, TASK
from .train import TrainConfig

METHODS = ("flix", "lora_compute_matched", "lora_param_matched")

DEFAULT_CONFIG = {
    "data": {
        "alphabet_size": 11,
        "tasks": [{"name": "copy", "multiplier": 1},
                  {"name": "double", "multiplier": 2},
                  {"name": "triple", "multiplier": 3}],
        "languages": [{"name": "alpha", "offset": 0},
                      {"name": "beta", "offset": 3},
                      {"name": "gamma", "offset": 5},
                      {"name": "delta", "offset": 8}],
        "seq_len": [4, 8],
        "examples_per_cell": 512,
        "eval_examples_per_cell": 128,
        "seed": 0,
    },
    "split": {
        "heldout_combinations": [["copy", "alpha"], ["double", "beta"], ["triple", "gamma"]],
        "heldout_languages": ["delta"],
    },
    "features": {
        "task_rank": 2,
        "language_rank": 4,
        "ranks": {},
        "shared": None,
        "budget": 6,
    },
    "model": {
        "hidden": 64,
        "base_seed": 1234,
        "init_std": None,
        "adapter_scale": 1.0,
    },
    "train": {
        "learning_rate": None,
        "batch_size": 32,
        "max_steps": 2000,
        "eval_every": 200,
        "dropout_p": 0.7,
        "optimizer": "adam",
        "seed": 0,
        "drop_shared": False,
    },
    "method": "flix",
    "output_dir": "runs/default",
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and key != "ranks":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _field(section, name, kind, where):
    value = section[name]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}.{name}: expected an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{where}.{name}: expected a number, got {value!r}")
    return value


@dataclass
class ExperimentConfig:
    raw: dict
    spec: SyntheticSpec
    plan: SplitPlan
    registry: FeatureRegistry
    budget: int
    train: TrainConfig
    method: str
    hidden: int
    base_seed: int
    init_std: float
    adapter_scale: float
    output_dir: str

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        raw = _merge(DEFAULT_CONFIG, doc)
        d, s, f, m, t = raw["data"], raw["split"], raw["features"], raw["model"], raw["train"]
        try:
            spec = SyntheticSpec(
                alphabet_size=_field(d, "alphabet_size", int, "data"),
                tasks=[(x["name"], x["multiplier"]) for x in d["tasks"]],
                languages=[(x["name"], x["offset"]) for x in d["languages"]],
                seq_len_range=tuple(d["seq_len"]),
                examples_per_cell=_field(d, "examples_per_cell", int, "data"),
                eval_examples_per_cell=_field(d, "eval_examples_per_cell", int, "data"),
                seed=_field(d, "seed", int, "data"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"data: malformed entry ({exc})") from None
        except ConfigError as exc:
            raise ConfigError(f"data: {exc}") from None
        try:
            plan = SplitPlan.grid(spec, [tuple(c) for c in s["heldout_combinations"]],
                                  s["heldout_languages"])
        except ConfigError as exc:
            raise ConfigError(f"split: {exc}") from None

        registry = build_registry(spec, plan, f)
        budget = _field(f, "budget", int, "features")
        check_budget(registry, plan, budget)

        method = raw["method"]
        if method not in METHODS:
            raise ConfigError(f"method: expected one of {list(METHODS)}, got {method!r}")
        hidden = _field(m, "hidden", int, "model")
        if hidden < 1:
            raise ConfigError("model.hidden: must be >= 1")
        init_std = m["init_std"]
        if init_std is not None and (_field(m, "init_std", float, "model") < 0):
            raise ConfigError("model.init_std: must be non-negative")
        try:
            train = TrainConfig(
                learning_rate=t["learning_rate"],
                batch_size=_field(t, "batch_size", int, "train"),
                max_steps=_field(t, "max_steps", int, "train"),
                eval_every=_field(t, "eval_every", int, "train"),
                dropout_p=_field(t, "dropout_p", float, "train"),
                optimizer=t["optimizer"],
                seed=_field(t, "seed", int, "train"),
                drop_shared=bool(t["drop_shared"]))
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("train.") else f"train: {msg}") from None
        return cls(raw=raw, spec=spec, plan=plan, registry=registry, budget=budget,
                   train=train, method=method, hidden=hidden,
                   base_seed=_field(m, "base_seed", int, "model"), init_std=init_std,
                   adapter_scale=_field(m, "adapter_scale", float, "model"),
                   output_dir=str(raw["output_dir"]))

    def with_overrides(self, doc):
        """New config with ``doc`` merged over this one's raw document."""
        return ExperimentConfig.from_dict(_merge(self.raw, doc))

    def to_dict(self):
        return copy.deepcopy(self.raw)


def build_registry(spec, plan, features):
    ranks = dict(features.get("ranks") or {})
    task_rank = _field(features, "task_rank", int, "features")
    lang_rank = _field(features, "language_rank", int, "features")
    langs = [l for l in spec.language_names if l not in plan.heldout_languages]
    entries = [Feature(t, TASK, ranks.pop(t, task_rank)) for t in spec.task_names]
    entries += [Feature(l, LANGUAGE, ranks.pop(l, lang_rank)) for l in langs]
    shared = features.get("shared")
    if shared is not None:
        try:
            entries.append(Feature(shared["name"], SHARED, shared["rank"]))
        except (KeyError, TypeError):
            raise ConfigError("features.shared: expected {\"name\": ..., \"rank\": ...}") from None
    if ranks:
        raise ConfigError(f"features.ranks: unknown features {sorted(ranks)}")
    try:
        return FeatureRegistry(entries)
    except ConfigError as exc:
        raise ConfigError(f"features: {exc}") from None


def check_budget(registry, plan, budget):
    """Every training cell's active ranks must add up to the declared budget."""
    for task, lang in sorted(plan.train_cells):
        fv = featurize(Metadata(task, lang), registry)
        total = sum(r for r, on in zip(registry.ranks, fv) if on)
        if total != budget:
            raise ConfigError(f"features.budget: rank schedule gives {total} for cell "
                              f"({task}, {lang}) but the declared budget is {budget}")


def load_config(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc)
