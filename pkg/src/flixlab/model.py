"""Frozen-base token tagger with feature-composed adapters on both layers.

Per position ``t``::

    e = embed[tokens[t]]
    u = relu(e @ W1(x))
    logits[t] = u @ W2(x)

with ``Wj(x) = wj_base + sum_i f_i(x) a_i b_i``. Only the adapter factors
train; gradients are computed by hand.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .adapters import AdapterBank, effective_weight, merge_for_serving, zero_init
from .errors import DomainError, NumericalError, ShapeError
from .features import check_vector, feature_dropout


def _frozen(m):
    m = np.array(m, dtype=np.float64)
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class FrozenBase:
    """Embedding table and the two base matrices; read-only arrays."""

    embed: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        embed, w1, w2 = (_frozen(linalg.as_matrix(m)) for m in (self.embed, self.w1, self.w2))
        v, h = embed.shape
        if w1.shape != (h, h) or w2.shape != (h, v):
            raise ShapeError(f"inconsistent base shapes: embed {embed.shape}, "
                             f"w1 {w1.shape}, w2 {w2.shape}")
        object.__setattr__(self, "embed", embed)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @classmethod
    def random(cls, vocab_size, hidden, seed):
        """A stand-in for a pretrained network: scaled gaussian weights."""
        rng = linalg.make_rng(seed)
        embed = linalg.gaussian(rng, vocab_size, hidden, 1.0)
        w1 = linalg.gaussian(rng, hidden, hidden, 1.0 / np.sqrt(hidden))
        w2 = linalg.gaussian(rng, hidden, vocab_size, 1.0 / np.sqrt(hidden))
        return cls(embed, w1, w2)

    @property
    def vocab_size(self):
        return self.embed.shape[0]

    @property
    def hidden(self):
        return self.embed.shape[1]

    def fingerprint(self):
        import hashlib
        h = hashlib.sha256()
        for m in (self.embed, self.w1, self.w2):
            h.update(np.ascontiguousarray(m).tobytes())
        return h.hexdigest()


class TaggerModel:
    """A :class:`FrozenBase` plus one adapter bank per layer."""

    def __init__(self, base, registry, bank1, bank2):
        h, v = base.hidden, base.vocab_size
        if (bank1.d, bank1.k) != (h, h) or (bank2.d, bank2.k) != (h, v):
            raise ShapeError("adapter banks do not match the base matrices")
        if bank1.ranks != registry.ranks or bank2.ranks != registry.ranks:
            raise ShapeError("adapter bank ranks disagree with the registry")
        self.base = base
        self.registry = registry
        self.bank1 = bank1
        self.bank2 = bank2

    @classmethod
    def build(cls, base, registry, seed, init_std=None, adapter_scale=1.0):
        rng = linalg.make_rng(seed)
        h, v = base.hidden, base.vocab_size
        bank1 = zero_init(registry, h, h, init_std, rng)
        bank2 = zero_init(registry, h, v, init_std, rng)
        bank1.scale = bank2.scale = adapter_scale
        return cls(base, registry, bank1, bank2)

    @property
    def vocab_size(self):
        return self.base.vocab_size

    @property
    def hidden(self):
        return self.base.hidden

    @property
    def banks(self):
        return (self.bank1, self.bank2)

    def parameters(self):
        return self.bank1.arrays() + self.bank2.arrays()

    def snapshot(self):
        return (self.bank1.copy(), self.bank2.copy())

    def restore(self, snap):
        self.bank1, self.bank2 = snap[0].copy(), snap[1].copy()

    def weights(self, fv):
        return (effective_weight(self.base.w1, self.bank1, fv),
                effective_weight(self.base.w2, self.bank2, fv))

    def merged(self, fv):
        """Dense serving weights for one feature combination."""
        return DenseModel(self.base.embed,
                          merge_for_serving(self.base.w1, self.bank1, fv),
                          merge_for_serving(self.base.w2, self.bank2, fv))


@dataclass(frozen=True)
class DenseModel:
    """Adapter-free weights, e.g. the output of a serving merge."""

    embed: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @property
    def vocab_size(self):
        return self.embed.shape[0]

    def logits(self, tokens):
        tokens = check_tokens(tokens, self.vocab_size)
        return _mlp(self.embed[tokens], self.w1, self.w2)[2]


@dataclass
class Sample:
    tokens: np.ndarray
    targets: np.ndarray
    fv: np.ndarray


class Batch:
    """A list of ``(tokens, targets, fv)`` samples."""

    def __init__(self, samples):
        self.samples = [Sample(np.asarray(t, dtype=np.int64), np.asarray(y, dtype=np.int64),
                               np.asarray(f, dtype=bool)) for t, y, f in samples]
        for s in self.samples:
            if s.tokens.ndim != 1 or s.tokens.size < 1 or s.tokens.shape != s.targets.shape:
                raise ShapeError("each sample needs equal-length non-empty tokens and targets")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass
class BankGradients:
    a: list
    b: list

    def arrays(self):
        out = []
        for a, b in zip(self.a, self.b):
            out += [a, b]
        return out


@dataclass
class AdapterGradients:
    """Gradient blocks shaped like the model's two banks."""

    bank1: BankGradients
    bank2: BankGradients

    @classmethod
    def zeros_like(cls, model):
        return cls(*(BankGradients([np.zeros_like(a) for a in bank.a],
                                   [np.zeros_like(b) for b in bank.b])
                     for bank in model.banks))

    @property
    def banks(self):
        return (self.bank1, self.bank2)

    def arrays(self):
        return self.bank1.arrays() + self.bank2.arrays()


def check_tokens(tokens, vocab_size):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ShapeError("tokens must be a non-empty 1-D sequence")
    if tokens.min() < 0 or tokens.max() >= vocab_size:
        raise DomainError(f"token ids must lie in [0, {vocab_size})")
    return tokens


def _mlp(e, w1, w2):
    z = e @ w1
    u = np.maximum(z, 0.0)
    return z, u, u @ w2


def forward(model, tokens, fv):
    """Logits of shape ``(len(tokens), V)`` under the weights selected by ``fv``."""
    tokens = check_tokens(tokens, model.vocab_size)
    fv = check_vector(fv, model.registry)
    w1, w2 = model.weights(fv)
    return _mlp(model.base.embed[tokens], w1, w2)[2]


def base_forward(base, tokens):
    """Logits of the frozen base alone."""
    tokens = check_tokens(tokens, base.vocab_size)
    return _mlp(base.embed[tokens], base.w1, base.w2)[2]


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(logits, targets):
    """Mean token cross-entropy."""
    logits = linalg.as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(f"{targets.size} targets for {logits.shape[0]} logit rows")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise DomainError(f"target ids must lie in [0, {logits.shape[1]})")
    logp = log_softmax(logits)
    return float(-logp[np.arange(targets.size), targets].mean())


def _groups(batch, fvs):
    """Sample indices grouped by feature pattern, in order of first appearance."""
    groups = {}
    for i, fv in enumerate(fvs):
        groups.setdefault(fv.tobytes(), []).append(i)
    return [(fvs[idx[0]], idx) for idx in groups.values()]


def batch_loss(model, batch):
    """Mean over samples of per-sample mean token loss; no dropout."""
    total = 0.0
    for s in batch:
        total += loss(forward(model, s.tokens, s.fv), s.targets)
    return total / len(batch)


def grad_adapters(model, batch, dropout_p=0.0, rng=None, exempt=None):
    """Mean batch loss and its exact gradient with respect to every adapter factor.

    Feature dropout is sampled per sample, in sample order, before the
    weights are composed. ``exempt`` defaults to the registry's shared
    feature. Blocks of features inactive in every (post-dropout) sample
    stay exactly zero.
    """
    if len(batch) == 0:
        raise ShapeError("batch is empty")
    reg = model.registry
    if exempt is None:
        exempt = reg.dropout_exempt()
    fvs = []
    for s in batch:
        check_tokens(s.tokens, model.vocab_size)
        fv = check_vector(s.fv, reg)
        if dropout_p > 0.0:
            fv = feature_dropout(fv, dropout_p, rng, exempt)
        fvs.append(fv)

    grads = AdapterGradients.zeros_like(model)
    embed = model.base.embed
    n = len(batch)
    total = 0.0
    for fv, idx in _groups(batch, fvs):
        tokens = np.concatenate([batch.samples[i].tokens for i in idx])
        targets = np.concatenate([batch.samples[i].targets for i in idx])
        # each position weighs 1 / (len(sample) * n) in the batch mean
        weight = np.concatenate([np.full(batch.samples[i].tokens.size,
                                         1.0 / (batch.samples[i].tokens.size * n)) for i in idx])
        w1, w2 = model.weights(fv)
        e = embed[tokens]
        z, u, logits = _mlp(e, w1, w2)
        logp = log_softmax(logits)
        rows = np.arange(tokens.size)
        total += float(-(logp[rows, targets] * weight).sum())

        dlogits = np.exp(logp)
        dlogits[rows, targets] -= 1.0
        dlogits *= weight[:, None]
        g2 = u.T @ dlogits
        dz = (dlogits @ w2.T) * (z > 0.0)
        g1 = e.T @ dz
        for bank, gbank, g in ((model.bank1, grads.bank1, g1), (model.bank2, grads.bank2, g2)):
            gs = g * bank.scale if bank.scale != 1.0 else g
            for i in np.flatnonzero(fv):
                gbank.a[i] += gs @ bank.b[i].T
                gbank.b[i] += bank.a[i].T @ gs
    if not np.isfinite(total):
        raise NumericalError(f"non-finite training loss {total}")
    return total, grads


def finite_difference_check(model, batch, epsilon=1e-4):
    """Worst relative error between analytic and central-difference gradients.

    Every adapter coordinate is perturbed by ``+-epsilon`` in place and
    restored. Relative error uses ``max(|analytic|, |numeric|, 1e-12)``.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    _, grads = grad_adapters(model, batch, 0.0)
    worst = 0.0
    for param, grad in zip(model.parameters(), grads.arrays()):
        flat, gflat = param.reshape(-1), grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = batch_loss(model, batch)
            flat[j] = orig - epsilon
            down = batch_loss(model, batch)
            flat[j] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(numeric - gflat[j]) / max(abs(gflat[j]), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
