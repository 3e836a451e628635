import numpy as np
import pytest

from flixlab import linalg
from flixlab.adapters import AdapterBank
from flixlab.features import Feature, FeatureRegistry, LANGUAGE, TASK
from flixlab.model import Batch, FrozenBase, TaggerModel

ACCEPTANCE_LINES = []


def random_tiny_model(seed, vocab=5, hidden=3, rank=1, std=1.0):
    """Two rank-``rank`` features with random (non-zero) factors on both layers."""
    rng = linalg.make_rng(seed)
    base = FrozenBase.random(vocab, hidden, seed + 10_000)
    reg = FeatureRegistry([Feature("t", TASK, rank), Feature("l", LANGUAGE, rank)])
    banks = []
    for d, k in ((hidden, hidden), (hidden, vocab)):
        banks.append(AdapterBank([linalg.gaussian(rng, d, rank, std) for _ in range(2)],
                                 [linalg.gaussian(rng, rank, k, std) for _ in range(2)], d, k))
    return TaggerModel(base, reg, *banks)


def random_batch(rng, vocab, d_features, n=4, max_len=5, fvs=None):
    samples = []
    for i in range(n):
        length = int(rng.integers(1, max_len + 1))
        tokens = rng.integers(0, vocab, size=length)
        targets = rng.integers(0, vocab, size=length)
        fv = fvs[i % len(fvs)] if fvs is not None else rng.random(d_features) < 0.6
        samples.append((tokens, targets, fv))
    return Batch(samples)


def min_preactivation(model, batch):
    """Smallest |z| in the first layer, used to stay clear of ReLU kinks."""
    worst = np.inf
    for s in batch:
        w1, _ = model.weights(s.fv)
        worst = min(worst, np.abs(model.base.embed[s.tokens] @ w1).min())
    return worst


def kink_free_case(seed, margin=1e-2, **kw):
    """Redraw model and batch until no pre-activation sits within ``margin`` of zero."""
    attempt = 0
    while True:
        model = random_tiny_model(seed * 1000 + attempt, **kw)
        rng = np.random.default_rng(seed * 1000 + attempt)
        batch = random_batch(rng, model.vocab_size, model.registry.D)
        if min_preactivation(model, batch) > margin:
            return model, batch
        attempt += 1


@pytest.fixture
def tiny_case():
    return kink_free_case


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
