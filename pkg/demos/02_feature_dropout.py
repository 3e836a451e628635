"""
Feature dropout and masking
===========================

During training every active feature bit is cleared independently with
probability p. No rescaling happens: a dropped feature simply contributes
nothing. A feature marked as shared is exempt unless asked otherwise.
"""

import numpy as np

from flixlab import linalg
from flixlab.features import (FeatureRegistry, Metadata, feature_dropout, featurize,
                              mask_for_unseen_language)

reg = FeatureRegistry.from_schedule(["copy", "double"], ["alpha", "beta"], 2, 4,
                                    shared=("shared", 4))
fv = featurize(Metadata("copy", "beta"), reg)
print("features:", reg.names)
print("copy/beta:", fv.astype(int))

# %%
# Draw many masks and look at how often each bit survives.

rng = linalg.make_rng(0)
exempt = reg.dropout_exempt()
kept = np.mean([feature_dropout(fv, 0.7, rng, exempt) for _ in range(10_000)], axis=0)
for name, on, rate in zip(reg.names, fv, kept):
    print(f"  {name:8s} active={int(on)}  kept {rate:.3f}")

# %%
# A language the registry has never seen cannot be looked up. Inference for it
# uses the task (and shared) features only.

print("copy/delta, task only:", mask_for_unseen_language(Metadata("copy", "delta"), reg).astype(int))
try:
    featurize(Metadata("copy", "delta"), reg)
except KeyError as err:
    print("featurize refuses:", err)
