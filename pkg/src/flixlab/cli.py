"""``flixlab`` command line: train, eval, merge, ablate, gen-data.

Exit codes: 0 ok, 2 config or usage error, 3 I/O failure, 4 non-finite loss.
Errors print one ``error: ...`` line on stderr.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import experiment
from .adapters import active_param_count, total_param_count
from .checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .data import SPLITS, by_cell, generate, generate_cell, write_tsv
from .errors import ConfigError, FlixError, NumericalError
from .features import LANGUAGE, TASK
from .model import DenseModel
from .train import evaluate, mean_metric, score

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

EVAL_MODES = {"standard": "standard", "unseen-comb": "unseen_combination",
              "unseen-lang": "unseen_language"}

DROPOUT_GRID = (0.0, 0.3, 0.5, 0.7)
LANGUAGE_RANK_GRID = (1, 2)
SHARED_ARM = {"shared": {"name": "shared", "rank": 4}, "task_rank": 1, "language_rank": 1,
              "budget": 6}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


def _summary(report, heldout):
    lines = [f"selected step: {report.selected_step}",
             f"mean validation exact_match: {report.selected_metric:.2f}"]
    for mode, block in heldout.items():
        lines.append(f"test {mode}: exact_match {block['mean_exact_match']:.2f}, "
                     f"token_f1 {block['mean_token_f1']:.2f}, "
                     f"token_accuracy {block['mean_token_accuracy']:.2f}")
    return "\n".join(lines) + "\n"


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.train.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output_dir)
    model, report, datasets = experiment.run(cfg, seed)
    heldout = experiment.heldout_metrics(model, cfg, datasets)
    meta = {"seed": seed, "experiment": cfg.to_dict()}
    save_checkpoint(out / "best.ckpt", model, step=report.selected_step, **meta)
    final = type(model)(model.base, model.registry, *report.final)
    save_checkpoint(out / "final.ckpt", final, step=cfg.train.max_steps, **meta)
    report.checkpoint = "best.ckpt"
    doc = report.to_json()
    doc["test"] = heldout
    doc["method"] = cfg.method
    _write_text(out / "report.json", _dump(doc))
    _write_text(out / "summary.txt", _summary(report, heldout))
    sys.stdout.write(_summary(report, heldout))
    return EXIT_OK


def _parse_cells(spec_text, cfg, mode):
    plan = cfg.plan
    named = {"train": sorted(plan.train_cells),
             "heldout": sorted(plan.heldout_combinations),
             "unseen": sorted(plan.unseen_language_cells),
             "test": sorted(plan.test_cells)}
    if spec_text is None:
        spec_text = {"standard": "train", "unseen_combination": "heldout",
                     "unseen_language": "unseen"}[mode]
    cells = []
    for item in spec_text.split(","):
        item = item.strip()
        if item in named:
            cells += named[item]
        elif ":" in item:
            task, lang = item.split(":", 1)
            if task not in cfg.spec.task_names or lang not in cfg.spec.language_names:
                raise ConfigError(f"--cells: {item!r} is not a cell of the synthetic benchmark")
            cells.append((task, lang))
        else:
            raise ConfigError(f"--cells: cannot parse {item!r}; use task:language or one of "
                              f"{sorted(named)}")
    return list(dict.fromkeys(cells))


def _check_mode(cells, model, cfg, mode):
    if isinstance(model, DenseModel):
        if mode != "standard":
            raise ConfigError("--mode: a merged checkpoint supports only standard evaluation")
        return
    reg = model.registry
    if reg.unconditional:
        return
    for task, lang in cells:
        reg.index(task, TASK)
        known = reg.has(lang, LANGUAGE)
        if mode == "unseen_language" and known:
            raise ConfigError(f"--mode unseen-lang: language {lang!r} is in the registry")
        if mode != "unseen_language" and not known:
            raise ConfigError(f"--mode {mode}: language {lang!r} is not in the registry; "
                              "use unseen-lang")
        if mode == "unseen_combination" and (task, lang) in cfg.plan.train_cells:
            raise ConfigError(f"--mode unseen-comb: ({task}, {lang}) is a training cell")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.experiment is None:
        raise ConfigError("checkpoint carries no experiment config to regenerate data from")
    cfg = ExperimentConfig.from_dict(ckpt.experiment)
    mode = EVAL_MODES[args.mode]
    cells = _parse_cells(args.cells, cfg, mode)
    _check_mode(cells, ckpt.model, cfg, mode)
    data = {c: generate_cell(cfg.spec, c[0], c[1], "test") for c in cells}
    if isinstance(ckpt.model, DenseModel):
        metrics = {}
        for c, examples in data.items():
            preds = [tuple(int(y) for y in ckpt.model.logits(e.tokens).argmax(axis=1))
                     for e in examples]
            metrics[c] = score(preds, [e.targets for e in examples])
    else:
        metrics = evaluate(ckpt.model, data, mode)
    doc = {"mode": args.mode, "checkpoint": str(args.checkpoint),
           "cells": {f"{t}/{l}": m for (t, l), m in metrics.items()},
           "mean_exact_match": mean_metric(metrics),
           "mean_token_f1": mean_metric(metrics, "token_f1"),
           "mean_token_accuracy": mean_metric(metrics, "token_accuracy")}
    sys.stdout.write(_dump(doc))
    return EXIT_OK


def cmd_merge(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    if isinstance(model, DenseModel):
        raise ConfigError("--checkpoint: already a merged checkpoint")
    reg = model.registry
    fv = reg.shared_vector()
    if not reg.unconditional:
        fv[reg.index(args.task, TASK)] = True
        if not args.task_only:
            if args.language is None:
                raise ConfigError("--language is required unless --task-only is given")
            fv[reg.index(args.language, LANGUAGE)] = True
    dense = model.merged(fv)
    features = [f.name for f, on in zip(reg, fv) if on]
    save_checkpoint(args.out, dense, merged_features=features, source=str(args.checkpoint),
                    experiment=ckpt.experiment, seed=ckpt.manifest.get("seed"),
                    step=ckpt.manifest.get("step"))
    active = sum(active_param_count(b, fv) for b in model.banks)
    total = sum(total_param_count(b) for b in model.banks)
    sys.stdout.write(_dump({"merged_features": features, "active_param_count": active,
                            "total_param_count": total, "out": str(args.out)}))
    return EXIT_OK


def ablation_arms(cfg, axis):
    """``(label, knob, config)`` for each arm of a sweep; data seed shared by all arms."""
    if axis == "dropout":
        return [(f"p={p}", p, cfg.with_overrides({"train": {"dropout_p": p}}))
                for p in DROPOUT_GRID]
    if axis == "rank":
        arms = []
        for r in LANGUAGE_RANK_GRID:
            task_rank = cfg.raw["features"]["task_rank"]
            arms.append((f"language_rank={r}", r, cfg.with_overrides(
                {"features": {"language_rank": r, "budget": task_rank + r}})))
        return arms
    if axis == "shared":
        off = cfg.with_overrides({"features": {"shared": None}}) \
            if cfg.raw["features"]["shared"] is not None else cfg
        return [("shared=off", False, off),
                ("shared=on", True, cfg.with_overrides({"features": SHARED_ARM}))]
    raise ConfigError(f"--axis: expected dropout, rank or shared, got {axis!r}")


def _run_arm(arm, datasets):
    label, knob, cfg = arm
    model, report, _ = experiment.run(cfg, datasets=datasets)
    heldout = experiment.heldout_metrics(model, cfg, datasets)
    row = {"label": label, "knob": knob, "dropout_p": cfg.train.dropout_p,
           "ranks": {f.name: f.rank for f in cfg.registry},
           "selected_step": report.selected_step,
           "valid_exact_match": report.selected_metric}
    for mode, block in heldout.items():
        row[f"{mode}_exact_match"] = block["mean_exact_match"]
        row[f"{mode}_token_accuracy"] = block["mean_token_accuracy"]
    return row


def worker_count():
    raw = os.environ.get("FLIXLAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FLIXLAB_THREADS: expected an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("FLIXLAB_THREADS: must be >= 0")
    return n or 1


def cmd_ablate(args):
    cfg = load_config(args.config)
    arms = ablation_arms(cfg, args.axis)
    datasets = generate(cfg.spec, cfg.plan)
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(arms))) as pool:
        rows = list(pool.map(lambda arm: _run_arm(arm, datasets), arms))
    doc = {"axis": args.axis, "method": cfg.method, "data_seed": cfg.spec.seed,
           "train_seed": cfg.train.seed, "runs": rows}
    text = _dump(doc)
    _write_text(Path(cfg.output_dir) / f"ablate-{args.axis}.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_data(args):
    cfg = load_config(args.config)
    datasets = generate(cfg.spec, cfg.plan)
    out = Path(args.out)
    for split in SPLITS:
        examples = [e for cell in sorted(by_cell(datasets, split))
                    for e in datasets[(cell[0], cell[1], split)]]
        write_tsv(out / f"{split}.tsv", examples)
    sys.stdout.write(_dump({split: sum(len(v) for (t, l, s), v in datasets.items() if s == split)
                            for split in SPLITS}))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="flixlab", description="Per-feature low-rank adapter workbench")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the configured method")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on test cells")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=sorted(EVAL_MODES), default="standard")
    p.add_argument("--cells", help="comma list of task:language or train|heldout|unseen|test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("merge", help="collapse adapters into dense serving weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--language")
    p.add_argument("--task-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("ablate", help="run a dropout, rank or shared-feature sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", choices=("dropout", "rank", "shared"), required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="export the synthetic splits as TSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="directory for train/valid/test .tsv")
    p.set_defaults(func=cmd_gen_data)
    return parser


def _fail(code, message):
    sys.stderr.write("error: " + " ".join(str(message).split()) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        return args.func(args)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except FlixError as exc:
        return _fail(EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
