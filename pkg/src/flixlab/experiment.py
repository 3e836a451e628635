"""Running configured experiments end to end: data, model, training, held-out evaluation."""

from .data import by_cell, generate
from .model import FrozenBase, TaggerModel
from .train import evaluate, mean_metric, train, train_baseline_lora

BASELINE_FLAVORS = {"lora_compute_matched": "compute_matched",
                    "lora_param_matched": "param_matched"}


def build_base(cfg):
    return FrozenBase.random(cfg.spec.alphabet_size, cfg.hidden, cfg.base_seed)


def build_model(cfg, seed=None):
    seed = cfg.train.seed if seed is None else seed
    return TaggerModel.build(build_base(cfg), cfg.registry, seed, cfg.init_std,
                             cfg.adapter_scale)


def run(cfg, seed=None, datasets=None):
    """Train the configured method; returns ``(model, report, datasets)``.

    The model is left holding the selected checkpoint.
    """
    if seed is not None and seed != cfg.train.seed:
        cfg = cfg.with_overrides({"train": {"seed": seed}})
    if datasets is None:
        datasets = generate(cfg.spec, cfg.plan)
    if cfg.method == "flix":
        model = build_model(cfg)
        report = train(model, datasets, cfg.train)
    else:
        model, report = train_baseline_lora(BASELINE_FLAVORS[cfg.method], build_base(cfg),
                                            cfg.registry, datasets, cfg.train, cfg.init_std,
                                            cfg.adapter_scale)
    model.restore(report.best)
    return model, report, datasets


def heldout_metrics(model, cfg, datasets):
    """Test-split metrics for in-distribution, unseen-combination and unseen-language cells."""
    test = by_cell(datasets, "test")
    plan = cfg.plan
    groups = {
        "standard": {c: test[c] for c in sorted(plan.train_cells)},
        "unseen_combination": {c: test[c] for c in sorted(plan.heldout_combinations)},
        "unseen_language": {c: test[c] for c in sorted(plan.unseen_language_cells)},
    }
    out = {}
    for mode, cells in groups.items():
        if not cells:
            continue
        metrics = evaluate(model, cells, mode)
        out[mode] = {
            "cells": {f"{t}/{l}": m for (t, l), m in metrics.items()},
            "mean_exact_match": mean_metric(metrics),
            "mean_token_f1": mean_metric(metrics, "token_f1"),
            "mean_token_accuracy": mean_metric(metrics, "token_accuracy"),
        }
    return out
