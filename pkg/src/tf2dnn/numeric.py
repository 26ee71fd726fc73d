"""Numeric building blocks shared by the rest of the package.

Everything is float64. Matrices are plain ``numpy.ndarray`` objects; the
random source is a thin wrapper over numpy's PCG64 bit generator so that a
seed fully determines every draw.
"""

from __future__ import annotations

import hashlib

import numpy as np
import scipy.linalg
from scipy.special import expit

LOG_2PI = float(np.log(2.0 * np.pi))


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a ridge system is not numerically positive definite."""


def softplus(x):
    """ln(1 + exp(x)), evaluated without overflow.

    Works on scalars and arrays. For positive inputs the identity
    ``x + ln(1 + exp(-x))`` keeps the exponential bounded.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    return out if out.ndim else float(out)


def softplus_grad(x):
    # d/dx softplus = logistic sigmoid
    return expit(x)


def logpdf_diag_gaussian(x, mean, psi) -> float:
    """Log density of ``x`` under N(mean, diag(psi))."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if x.shape != mean.shape or x.shape != psi.shape:
        raise ValueError(f"dimension mismatch: x{x.shape} mean{mean.shape} psi{psi.shape}")
    if np.any(psi <= 0):
        raise ValueError("variances must be strictly positive")
    diff = x - mean
    return float(-0.5 * np.sum(LOG_2PI + np.log(psi) + diff * diff / psi))


def logpdf_diag_gaussian_rows(X, means, psi) -> np.ndarray:
    """Row-wise version of :func:`logpdf_diag_gaussian` for (T, D) arrays."""
    X = np.asarray(X, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if X.shape != means.shape or X.shape[-1:] != psi.shape:
        raise ValueError(f"dimension mismatch: X{X.shape} means{means.shape} psi{psi.shape}")
    if np.any(psi <= 0):
        raise ValueError("variances must be strictly positive")
    diff = X - means
    const = -0.5 * np.sum(LOG_2PI + np.log(psi))
    return const - 0.5 * np.sum(diff * diff / psi, axis=-1)


def ridge_solve(A, lam: float, rhs) -> np.ndarray:
    """Solve ``(A + lam*I) X = rhs`` with a Cholesky factorization.

    ``A`` must be symmetric positive semidefinite and ``A + lam*I`` positive
    definite. A failed factorization, or a pivot that is negligible relative
    to the diagonal, raises :class:`SingularSystemError`.
    """
    A = np.asarray(A, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    if rhs.shape[0] != A.shape[0]:
        raise ValueError(f"rhs rows {rhs.shape[0]} != system size {A.shape[0]}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    n = A.shape[0]
    system = A + lam * np.eye(n) if lam else A.copy()
    try:
        chol = np.linalg.cholesky(system)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"A + {lam}*I is not positive definite") from exc
    pivots = np.diag(chol) ** 2
    scale = max(float(np.max(np.abs(np.diag(system)))), np.finfo(np.float64).tiny)
    if np.min(pivots) <= n * np.finfo(np.float64).eps * scale:
        raise SingularSystemError(f"A + {lam}*I is numerically singular")
    return scipy.linalg.cho_solve((chol, True), rhs, check_finite=False)


class Rng:
    """Seeded Gaussian/uniform source backed by numpy's PCG64.

    PCG64 is a fixed, documented generator; a given seed yields the same
    stream on every platform. Child generators are derived from the seed plus
    a string key, never from execution order.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def gaussian(self, n, stddev: float = 1.0) -> np.ndarray:
        if stddev < 0:
            raise ValueError("stddev must be non-negative")
        draws = self._gen.standard_normal(n)
        return draws * stddev

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def fork(self, key: str) -> "Rng":
        return Rng(derive_seed(self.seed, key))


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit seed from a master seed and any number of keys."""
    h = hashlib.sha256(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x00")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_gaussian(rng: Rng, n, stddev: float) -> np.ndarray:
    """``n`` i.i.d. N(0, stddev**2) draws from ``rng``."""
    return rng.gaussian(n, stddev)
