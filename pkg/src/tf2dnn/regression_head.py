"""Linear-Gaussian output layer and its closed-form estimators.

The output layer is read as the regression x_t ~ N(B^T y_t, Psi), with y_t
the penultimate activations augmented by a constant 1 so the bias is the last
row of ``B`` (shape M x D, M = penultimate width + 1).

All estimators reduce to one linear system. Dividing the MAP normal
equations (beta*Syy + lam0*I) B = beta*Syx + lam0*B0 by beta gives

    (Syy + r*I) (B - B0) = Syx - Syy B0,     r = lam0 / beta

which is what :func:`_posterior_mean` solves. Solving for the offset from the
prior mean makes "no data" return the prior mean exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import SingularSystemError, logpdf_diag_gaussian_rows, ridge_solve

PSI_FLOOR = 1e-6


def augment(y) -> np.ndarray:
    """Append the constant-1 bias regressor to each row."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return np.append(y, 1.0)
    return np.hstack([y, np.ones((y.shape[0], 1))])


@dataclass
class SufficientStats:
    syy: np.ndarray  # (M, M)
    syx: np.ndarray  # (M, D)
    n: int

    @classmethod
    def zeros(cls, m: int, d: int) -> "SufficientStats":
        return cls(np.zeros((m, m)), np.zeros((m, d)), 0)

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        if self.syx.shape != other.syx.shape:
            raise ValueError("cannot add stats of different shapes")
        return SufficientStats(self.syy + other.syy, self.syx + other.syx, self.n + other.n)

    def scaled(self, c: float) -> "SufficientStats":
        return SufficientStats(c * self.syy, c * self.syx, self.n)

    def normalized(self) -> "SufficientStats":
        """Per-frame averages (n kept); zero stats stay zero."""
        return self.scaled(1.0 / self.n) if self.n else self

    @property
    def m(self) -> int:
        return self.syy.shape[0]

    @property
    def d(self) -> int:
        return self.syx.shape[1]


def accumulate_stats(y_aug, x) -> SufficientStats:
    """Syy = sum_t y_t y_t^T and Syx = sum_t y_t x_t^T over rows of already
    augmented regressors ``y_aug`` and targets ``x``."""
    y_aug = np.asarray(y_aug, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y_aug.ndim == 1:
        y_aug = y_aug[None, :]
    if x.ndim == 1:
        x = x[None, :]
    if y_aug.shape[0] != x.shape[0]:
        raise ValueError(f"{y_aug.shape[0]} regressor rows but {x.shape[0]} target rows")
    return SufficientStats(y_aug.T @ y_aug, y_aug.T @ x, int(y_aug.shape[0]))


@dataclass
class PosteriorParams:
    mean: np.ndarray  # B_N (M x D)
    precision: np.ndarray  # Sigma_N^-1 (M x M)


def _check(lam0, beta):
    if lam0 < 0:
        raise ValueError("lam0 must be >= 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")


def _posterior_mean(syy, syx, ratio: float, B0) -> np.ndarray:
    B0 = np.zeros_like(syx) if B0 is None else np.asarray(B0, dtype=np.float64)
    if B0.shape != syx.shape:
        raise ValueError(f"prior mean shape {B0.shape} != {syx.shape}")
    return B0 + ridge_solve(syy, ratio, syx - syy @ B0)


def estimate_ml(stats: SufficientStats) -> np.ndarray:
    """Least-squares weights solving Syy B = Syx."""
    try:
        return ridge_solve(stats.syy, 0.0, stats.syx)
    except SingularSystemError as exc:
        raise SingularSystemError(
            "Syy is singular; the ML estimate does not exist, use estimate_map with lam0 > 0"
        ) from exc


def posterior(stats: SufficientStats, lam0: float, beta: float, B0=None) -> PosteriorParams:
    """Gaussian posterior over B under the prior N(B0, lam0^-1 I) and
    isotropic noise precision ``beta``."""
    _check(lam0, beta)
    mean = _posterior_mean(stats.syy, stats.syx, lam0 / beta, B0)
    precision = beta * stats.syy + lam0 * np.eye(stats.m)
    return PosteriorParams(mean, precision)


def estimate_map(stats: SufficientStats, lam0: float, beta: float, B0=None) -> np.ndarray:
    """MAP weights; identical to the posterior mean by construction."""
    return posterior(stats, lam0, beta, B0).mean


def estimate_psi(y_aug, x, B, floor: float = PSI_FLOOR) -> np.ndarray:
    """Per-dimension mean squared residual of x against y_aug @ B, floored."""
    y_aug = np.atleast_2d(np.asarray(y_aug, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 1:
        raise ValueError("need at least one frame")
    resid = x - y_aug @ B
    return np.maximum(np.mean(resid * resid, axis=0), floor)


@dataclass
class RegressionHead:
    B: np.ndarray  # (M, D), last row is the bias
    psi: np.ndarray  # (D,)
    lam0: float = 1.0
    B0: np.ndarray | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        if self.psi.shape != (self.B.shape[1],):
            raise ValueError("psi must have one variance per output dimension")
        if np.any(self.psi < PSI_FLOOR):
            raise ValueError(f"variances below floor {PSI_FLOOR}")
        if self.lam0 < 0:
            raise ValueError("lam0 must be >= 0")

    @property
    def beta(self) -> float:
        return 1.0 / float(np.mean(self.psi))

    def with_weights(self, B) -> "RegressionHead":
        return RegressionHead(np.asarray(B), self.psi, self.lam0, self.B0)

    def mean(self, y) -> np.ndarray:
        return augment(y) @ self.B


def head_loglik(head: RegressionHead, y, x):
    """log N(x; B^T [y, 1], diag(psi)); per row when given (T, .) arrays."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape[-1] + 1 != head.B.shape[0] or x.shape[-1] != head.B.shape[1]:
        raise ValueError(f"dimension mismatch: y{y.shape} x{x.shape} B{head.B.shape}")
    if y.ndim == 1:
        return float(logpdf_diag_gaussian_rows(x[None, :], head.mean(y)[None, :], head.psi)[0])
    return logpdf_diag_gaussian_rows(x, head.mean(y), head.psi)
