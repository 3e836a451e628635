"""Optimizers, the training loop with periodic validation, evaluation and LoRA baselines."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg
from .adapters import compute_matched_rank, param_matched_rank, zero_init
from .data import by_cell, exact_match, token_accuracy, token_f1
from .errors import ConfigError, DomainError
from .features import FeatureRegistry, Metadata, featurize, mask_for_unseen_language
from .model import Batch, TaggerModel, _mlp, grad_adapters

MODES = ("standard", "unseen_combination", "unseen_language")
DEFAULT_LR = {"adam": 5e-3, "sgd": 5e-2}
FULL_SCALE_BATCH_SIZE = 512


@dataclass
class TrainConfig:
    learning_rate: float = None
    batch_size: int = 32
    max_steps: int = 2000
    eval_every: int = 200
    dropout_p: float = 0.7
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    drop_shared: bool = False

    def __post_init__(self):
        if self.optimizer not in DEFAULT_LR:
            raise ConfigError(f"train.optimizer must be one of {sorted(DEFAULT_LR)}, "
                              f"got {self.optimizer!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.optimizer]
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")
        if self.eval_every < 1 or (self.max_steps > 0 and self.eval_every > self.max_steps):
            raise ConfigError("train.eval_every must lie in [1, max_steps]")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ConfigError("train.dropout_p must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be positive")

    def to_json(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def sgd_step(params, grads, lr):
    for p, g in zip(params, grads):
        p -= lr * g


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, cfg):
    """In-place bias-corrected Adam update."""
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def cell_vector(reg, task, language, mode="standard"):
    """Feature vector used for every example of one cell."""
    if mode not in MODES:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if reg.unconditional:
        return reg.shared_vector()
    meta = Metadata(task, language)
    if mode == "unseen_language":
        return mask_for_unseen_language(meta, reg)
    return featurize(meta, reg)


def predict(model, examples, fv):
    """Greedy per-position predictions for examples sharing one feature vector."""
    if not examples:
        return []
    w1, w2 = model.weights(fv)
    tokens = np.concatenate([np.asarray(e.tokens, dtype=np.int64) for e in examples])
    logits = _mlp(model.base.embed[tokens], w1, w2)[2]
    pred = logits.argmax(axis=1)
    out, i = [], 0
    for e in examples:
        n = len(e.tokens)
        out.append(tuple(int(x) for x in pred[i:i + n]))
        i += n
    return out


def score(predictions, references):
    return {"exact_match": exact_match(predictions, references),
            "token_f1": token_f1(predictions, references),
            "token_accuracy": token_accuracy(predictions, references)}


def evaluate(model, cells, mode="standard"):
    """Per-cell metrics for ``{(task, language): examples}``; dropout is never applied."""
    out = {}
    for (task, lang), examples in cells.items():
        fv = cell_vector(model.registry, task, lang, mode)
        preds = predict(model, examples, fv)
        out[(task, lang)] = score(preds, [e.targets for e in examples])
    return out


def mean_metric(metrics, key="exact_match"):
    if not metrics:
        return 0.0
    return float(np.mean([m[key] for m in metrics.values()]))


@dataclass
class TrainReport:
    evals: list
    selected_step: int
    selected_metric: float
    config: dict
    seed: int
    registry: list
    best: tuple = field(default=None, repr=False)
    final: tuple = field(default=None, repr=False)
    loss_history: list = field(default_factory=list, repr=False)
    checkpoint: str = None

    def metric_table(self):
        return [{"step": e["step"], "mean_exact_match": e["mean_exact_match"],
                 "train_loss": e["train_loss"], "cells": e["cells"]} for e in self.evals]

    def to_json(self):
        return {"evals": self.metric_table(),
                "selection": {"rule": "max mean validation exact_match, earliest step on ties",
                              "selected_step": self.selected_step,
                              "selected_metric": self.selected_metric},
                "config": self.config, "seed": self.seed, "registry": self.registry,
                "checkpoint": self.checkpoint}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _cell_key(cell):
    return f"{cell[0]}/{cell[1]}"


def _check_coverage(reg, cells):
    if reg.unconditional:
        return
    for task, lang in cells:
        featurize(Metadata(task, lang), reg)


def train(model, datasets, cfg):
    """Train the model's adapter banks in place and return the selection report.

    ``datasets`` maps ``(task, language, split)`` to examples. Cells are
    interleaved round-robin; each cell reshuffles at the end of its epoch.
    Validation runs at step 0 and every ``eval_every`` steps.
    """
    train_cells = by_cell(datasets, "train")
    train_cells = {c: ex for c, ex in sorted(train_cells.items()) if ex}
    valid_cells = dict(sorted(by_cell(datasets, "valid").items()))
    if not train_cells:
        raise ConfigError("no training cell has examples")
    reg = model.registry
    _check_coverage(reg, list(train_cells) + list(valid_cells))

    shuffle_rng, dropout_rng = linalg.child_rngs(cfg.seed, 2)
    cell_list = list(train_cells)
    fvs = {c: cell_vector(reg, *c) for c in cell_list}
    arrays = {c: [(np.asarray(e.tokens, dtype=np.int64), np.asarray(e.targets, dtype=np.int64))
                  for e in ex] for c, ex in train_cells.items()}
    orders = {c: [] for c in cell_list}
    cursor = 0

    def next_batch():
        nonlocal cursor
        samples = []
        for _ in range(cfg.batch_size):
            c = cell_list[cursor % len(cell_list)]
            cursor += 1
            if not orders[c]:
                orders[c] = list(shuffle_rng.permutation(len(arrays[c])))
            tok, tgt = arrays[c][orders[c].pop()]
            samples.append((tok, tgt, fvs[c]))
        return Batch(samples)

    params = model.parameters()
    state = AdamState.like(params)
    exempt = reg.dropout_exempt(cfg.drop_shared)

    evals, snaps, losses = [], {}, []

    def record(step):
        metrics = evaluate(model, valid_cells)
        window = losses[-cfg.eval_every:] if step > 0 else []
        evals.append({"step": step, "mean_exact_match": mean_metric(metrics),
                      "train_loss": float(np.mean(window)) if window else None,
                      "cells": {_cell_key(c): m for c, m in metrics.items()}})
        snaps[step] = model.snapshot()

    record(0)
    for step in range(1, cfg.max_steps + 1):
        batch = next_batch()
        value, grads = grad_adapters(model, batch, cfg.dropout_p, dropout_rng, exempt)
        losses.append(value)
        if cfg.optimizer == "adam":
            adam_step(params, grads.arrays(), state, cfg)
        else:
            sgd_step(params, grads.arrays(), cfg.learning_rate)
        if step % cfg.eval_every == 0:
            record(step)

    best = max(evals, key=lambda e: (e["mean_exact_match"], -e["step"]))
    final = model.snapshot()
    return TrainReport(evals=evals, selected_step=best["step"],
                       selected_metric=best["mean_exact_match"], config=cfg.to_json(),
                       seed=cfg.seed, registry=reg.to_json(), best=snaps[best["step"]],
                       final=final, loss_history=losses)


def baseline_rank(flavor, registry, datasets, hidden, vocab_size):
    """LoRA rank matching a feature registry's compute or parameter budget."""
    if flavor == "compute_matched":
        cells = sorted(by_cell(datasets, "train"))
        if registry.unconditional:
            sets = [registry.shared_vector()]
        else:
            sets = [featurize(Metadata(t, l), registry) for t, l in cells]
        return compute_matched_rank(sets, registry)
    if flavor == "param_matched":
        # every feature shares (d, k) within a layer, so both layers agree
        r1 = param_matched_rank(zero_init(registry, hidden, hidden, 0.0))
        r2 = param_matched_rank(zero_init(registry, hidden, vocab_size, 0.0))
        return max(r1, r2)
    raise ConfigError(f"unknown baseline flavor {flavor!r}")


def train_baseline_lora(flavor, base, registry, datasets, cfg, init_std=None, adapter_scale=1.0):
    """Train a single always-active adapter sized against ``registry``.

    Returns ``(model, report)``.
    """
    _check_coverage(registry, [c for c in by_cell(datasets, "train")])
    rank = baseline_rank(flavor, registry, datasets, base.hidden, base.vocab_size)
    model = TaggerModel.build(base, FeatureRegistry.single(rank), cfg.seed, init_std,
                              adapter_scale)
    return model, train(model, datasets, cfg)


