"""Per-feature low-rank adapter banks and their additive composition."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DomainError, ShapeError
from .features import check_vector


@dataclass
class LoraAdapter:
    """A single low-rank update ``a @ b`` applied to every input."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = linalg.as_matrix(self.a, "a")
        self.b = linalg.as_matrix(self.b, "b")
        if self.a.shape[1] != self.b.shape[0]:
            raise ShapeError(f"factor shapes {self.a.shape} and {self.b.shape} do not chain")
        if self.r > min(self.d, self.k):
            raise ShapeError(f"rank {self.r} exceeds min(d, k) = {min(self.d, self.k)}")

    @property
    def r(self):
        return self.a.shape[1]

    @property
    def d(self):
        return self.a.shape[0]

    @property
    def k(self):
        return self.b.shape[1]

    def delta(self):
        return linalg.matmul(self.a, self.b)

    def effective_weight(self, w0):
        return linalg.add(w0, self.delta())


@dataclass
class AdapterBank:
    """One ``(a_i, b_i)`` factor pair per registry feature, all sharing ``(d, k)``.

    ``scale`` multiplies the composed update; it stays 1.0 unless an
    experiment overrides it.
    """

    a: list
    b: list
    d: int
    k: int
    scale: float = 1.0
    ranks: list = field(init=False)

    def __post_init__(self):
        if len(self.a) != len(self.b) or not self.a:
            raise ShapeError("a bank needs the same positive number of left and right factors")
        self.a = [linalg.as_matrix(x, "a factor") for x in self.a]
        self.b = [linalg.as_matrix(x, "b factor") for x in self.b]
        for i, (a, b) in enumerate(zip(self.a, self.b)):
            if a.shape[0] != self.d or b.shape[1] != self.k or a.shape[1] != b.shape[0]:
                raise ShapeError(f"feature {i}: factors {a.shape}, {b.shape} "
                                 f"do not fit a {self.d}x{self.k} weight")
            linalg.check_finite(a, f"feature {i} a factor")
            linalg.check_finite(b, f"feature {i} b factor")
        self.ranks = [a.shape[1] for a in self.a]

    @property
    def D(self):
        return len(self.a)

    def arrays(self):
        """Trainable arrays in a fixed order: a_0, b_0, a_1, b_1, ..."""
        out = []
        for a, b in zip(self.a, self.b):
            out += [a, b]
        return out

    def copy(self):
        return AdapterBank([a.copy() for a in self.a], [b.copy() for b in self.b],
                           self.d, self.k, self.scale)

    def equal(self, other):
        return (self.d == other.d and self.k == other.k and self.scale == other.scale
                and self.D == other.D
                and all(np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())))


def zero_init(reg, d, k, std=None, rng=None):
    """Bank with gaussian left factors and all-zero right factors.

    ``std`` defaults to ``1/sqrt(d)``. The composed update is exactly zero
    for every feature vector.
    """
    if std is None:
        std = 1.0 / math.sqrt(d)
    if std < 0:
        raise DomainError(f"std must be non-negative, got {std}")
    if std > 0 and rng is None:
        raise DomainError("a random generator is required when std > 0")
    a = [linalg.gaussian(rng, d, r, std) for r in reg.ranks]
    b = [linalg.zeros(r, k) for r in reg.ranks]
    return AdapterBank(a, b, d, k)


def compose_delta(bank, fv):
    """Sum of ``a_i @ b_i`` over the active features of ``fv``."""
    fv = check_vector(fv, bank.D)
    delta = linalg.zeros(bank.d, bank.k)
    for i in np.flatnonzero(fv):
        delta += bank.a[i] @ bank.b[i]
    if bank.scale != 1.0:
        delta *= bank.scale
    return linalg.check_finite(delta, "composed update")


def _check_base(w0, bank):
    w0 = linalg.as_matrix(w0, "base weight")
    if w0.shape != (bank.d, bank.k):
        raise ShapeError(f"base weight is {w0.shape[0]}x{w0.shape[1]}, "
                         f"bank expects {bank.d}x{bank.k}")
    return w0


def effective_weight(w0, bank, fv):
    w0 = _check_base(w0, bank)
    return w0 + compose_delta(bank, fv)


def merge_for_serving(w0, bank, fv):
    """Dense weight for one feature combination, built with a single product.

    The active factors are concatenated along the rank axis so only their
    parameters are touched; the result matches :func:`effective_weight` up
    to summation order.
    """
    w0 = _check_base(w0, bank)
    active = np.flatnonzero(check_vector(fv, bank.D))
    if active.size == 0:
        return w0.copy()
    a = np.concatenate([bank.a[i] for i in active], axis=1)
    b = np.concatenate([bank.b[i] for i in active], axis=0)
    return linalg.check_finite(w0 + bank.scale * (a @ b), "merged weight")


def active_param_count(bank, fv):
    fv = check_vector(fv, bank.D)
    return sum(r * (bank.d + bank.k) for r, on in zip(bank.ranks, fv) if on)


def total_param_count(bank):
    return sum(r * (bank.d + bank.k) for r in bank.ranks)


def compute_matched_rank(dataset_feature_sets, reg):
    """Largest per-dataset sum of active feature ranks."""
    if not dataset_feature_sets:
        raise DomainError("compute-matched rank needs at least one dataset")
    ranks = np.asarray(reg.ranks)
    return max(int(ranks[check_vector(fv, reg)].sum()) for fv in dataset_feature_sets)


def param_matched_rank(bank):
    """Smallest single-adapter rank whose parameter count reaches the bank's total."""
    if bank.D == 0:
        raise DomainError("bank is empty")
    return -(-total_param_count(bank) // (bank.d + bank.k))
