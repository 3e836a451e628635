"""
Composing per-feature low-rank updates
======================================

Each discrete feature of an input (its task, its language) owns a pair of
low-rank factors. The weight seen by an input is the frozen weight plus the
sum of the products for the features that are switched on.
"""

import numpy as np

from flixlab import linalg
from flixlab.adapters import AdapterBank, compose_delta, effective_weight, zero_init
from flixlab.features import FeatureRegistry, Metadata, featurize

# %%
# Three tasks and three languages. Tasks get rank 2, languages rank 4, so any
# single (task, language) pair activates rank 6 in total.

reg = FeatureRegistry.from_schedule(["copy", "double", "triple"], ["alpha", "beta", "gamma"], 2, 4)
print([(f.name, f.kind, f.rank) for f in reg])

fv = featurize(Metadata("double", "beta"), reg)
print("double/beta ->", fv.astype(int))

# %%
# A freshly initialised bank has every b factor at zero, so the adapted weight
# is the frozen weight, bit for bit.

d, k = 8, 8
w0 = linalg.gaussian(linalg.make_rng(0), d, k, 1.0)
bank = zero_init(reg, d, k, rng=linalg.make_rng(1))
print("zero-init leaves W0 unchanged:", np.array_equal(effective_weight(w0, bank, fv), w0))

# %%
# With random factors the update is a sum of low-rank pieces. Its rank is
# bounded by the active ranks, but it is not limited to the rank of any one
# feature.

rng = np.random.default_rng(2)
bank = AdapterBank([rng.normal(size=(d, r)) for r in reg.ranks],
                   [rng.normal(size=(r, k)) for r in reg.ranks], d, k)
for task, lang in [("copy", "alpha"), ("double", "gamma")]:
    fv = featurize(Metadata(task, lang), reg)
    delta = compose_delta(bank, fv)
    print(f"{task}/{lang}: rank of update = {linalg.numerical_rank(delta)} "
          f"(active ranks sum to {sum(r for r, on in zip(reg.ranks, fv) if on)})")

everything = np.ones(reg.D, dtype=bool)
print("all six features:", linalg.numerical_rank(compose_delta(bank, everything)), "(capped at d = 8)")
