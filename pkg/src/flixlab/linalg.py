"""Dense float64 matrices and seeded randomness.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
helpers here add the shape and finiteness checks the rest of the package
relies on. Randomness comes from ``numpy.random.Generator`` backed by
PCG64 (128-bit LCG state, XSL-RR output permutation, 64-bit outputs),
seeded from a 64-bit integer through ``SeedSequence``.
"""

import numpy as np

from .errors import DomainError, NumericalError, ShapeError

Rng = np.random.Generator

DEFAULT_RANK_TOL = 1e-9


def make_rng(seed):
    """Fresh PCG64 generator for an unsigned 64-bit ``seed``."""
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rngs(seed, n):
    """``n`` independent generators derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


def as_matrix(x, name="matrix"):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    return m


def check_finite(m, what="result"):
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{what} contains non-finite entries")
    return m


def zeros(rows, cols):
    return np.zeros((rows, cols), dtype=np.float64)


def identity(n):
    return np.eye(n, dtype=np.float64)


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul")


def add(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape[0]}x{a.shape[1]} and {b.shape[0]}x{b.shape[1]}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a + b
    return check_finite(out, "add")


def scale(a, s):
    with np.errstate(over="ignore", invalid="ignore"):
        out = as_matrix(a) * float(s)
    return check_finite(out, "scale")


def transpose(a):
    return as_matrix(a).T.copy()


def outer(u, v):
    return np.outer(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))


def numerical_rank(a, tol=DEFAULT_RANK_TOL):
    """Count singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    s = np.linalg.svd(as_matrix(a), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def gaussian(rng, rows, cols, std):
    """``rows x cols`` matrix of i.i.d. N(0, std^2) draws."""
    if std < 0:
        raise DomainError(f"std must be non-negative, got {std}")
    if std == 0:
        return zeros(rows, cols)
    return rng.normal(0.0, std, size=(rows, cols))
