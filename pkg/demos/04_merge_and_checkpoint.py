"""
Merging for serving and saving checkpoints
==========================================

Once the features of a request are known, their adapters can be folded into
the frozen weights. The merged model is a plain dense network and carries no
adapter parameters at all.
"""

import tempfile
from pathlib import Path

import numpy as np

from flixlab import experiment
from flixlab.adapters import active_param_count, total_param_count
from flixlab.checkpoint import load_checkpoint, save_checkpoint
from flixlab.config import ExperimentConfig
from flixlab.features import Metadata, featurize
from flixlab.model import forward

cfg = ExperimentConfig.from_dict({"train": {"max_steps": 400}})
model, report, _ = experiment.run(cfg)
reg = model.registry

fv = featurize(Metadata("triple", "alpha"), reg)
dense = model.merged(fv)
tokens = np.arange(11)
gap = np.abs(dense.logits(tokens) - forward(model, tokens, fv)).max()
print("merged vs adapter path, max |logit diff|:", gap)
print("predicted:", dense.logits(tokens).argmax(axis=1))
print("gold:     ", cfg.spec.gold("triple", "alpha", tokens))

active = sum(active_param_count(b, fv) for b in model.banks)
total = sum(total_param_count(b) for b in model.banks)
print(f"adapter parameters used by this request: {active} of {total}")

# %%
# Checkpoints round-trip bit for bit.

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ckpt"
    save_checkpoint(path, model, seed=cfg.train.seed, step=report.selected_step)
    back = load_checkpoint(path)
    same = all(np.array_equal(x, y) for x, y in zip(model.parameters(), back.model.parameters()))
    print(f"{path.stat().st_size} bytes, step {back.manifest['step']}, identical: {same}")
