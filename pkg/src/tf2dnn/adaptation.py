"""UBM assembly and speaker enrollment.

A speaker model is built from enrollment frames forwarded through the UBM
network with zero factors. Three routes are available:

* ``map_prior``: MAP estimate of B with the UBM weights as prior mean.
* ``interpolated``: zero-mean prior, UBM and speaker stats mixed by ``alpha``.
* ``factor``: network and head frozen; only a speaker factor is fitted by
  tied gradient descent over the enrollment frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkParams, forward
from .regression_head import (
    PSI_FLOOR,
    RegressionHead,
    SufficientStats,
    accumulate_stats,
    augment,
    posterior,
)
from .trainer import CHUNK, Dataset, LatentFactors, factor_gradients

METHODS = ("map_prior", "interpolated", "factor")
STATS_FACTORS = ("trained", "zero")


@dataclass
class UbmModel:
    params: NetworkParams
    head: RegressionHead
    stats: SufficientStats
    factors: LatentFactors
    stats_factors: str = "trained"

    @property
    def B(self) -> np.ndarray:
        return self.head.B

    @property
    def beta(self) -> float:
        return self.head.beta

    @property
    def lam0(self) -> float:
        return self.head.lam0


@dataclass
class SpeakerModel:
    model_id: str
    B: np.ndarray
    method: str
    z2: np.ndarray | None = None
    alpha: float | None = None
    ubm_digest: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown adaptation method {self.method!r}")
        if (self.method == "factor") != (self.z2 is not None):
            raise ValueError("a speaker factor is present exactly for the 'factor' method")


def network_regressors(params: NetworkParams, frames, z1=None, z2=None, masks=None) -> np.ndarray:
    """Penultimate activations y_t for ``frames`` (not augmented)."""
    return forward(params, frames, z1, z2, masks).penultimate


def build_ubm(params: NetworkParams, factors: LatentFactors, data: Dataset, lam0: float = 1.0,
              stats_factors: str = "trained") -> UbmModel:
    """Collect UBM stats and fit the regression head.

    Psi is the per-dimension residual variance of the trained output layer
    on the same regressors the stats are built from; beta = 1/mean(Psi). The
    UBM weights are then the zero-mean posterior mean of the stats.
    """
    if stats_factors not in STATS_FACTORS:
        raise ValueError(f"stats_factors must be one of {STATS_FACTORS}")
    L = params.n_layers - 1
    B_net = np.vstack([params.W(L).T, params.b(L)[None, :]])
    m = B_net.shape[0]
    stats = SufficientStats.zeros(m, data.dim)
    sq = np.zeros(data.dim)
    for start in range(0, data.n_frames, CHUNK):
        idx = np.arange(start, min(start + CHUNK, data.n_frames))
        z1 = z2 = None
        if stats_factors == "trained":
            z1 = factors.Z1[data.session[idx]] if params.r1 else None
            z2 = factors.Z2[data.speaker[idx]] if params.r2 else None
        y = augment(network_regressors(params, data.frames[idx], z1, z2))
        x = data.frames[idx]
        stats = stats + accumulate_stats(y, x)
        resid = x - y @ B_net
        sq += np.sum(resid * resid, axis=0)
    psi = np.maximum(sq / max(data.n_frames, 1), PSI_FLOOR)
    beta = 1.0 / float(np.mean(psi))
    B_ubm = posterior(stats, lam0, beta).mean
    return UbmModel(params, RegressionHead(B_ubm, psi, lam0), stats, factors, stats_factors)


def compute_enrol_stats(ubm: UbmModel, frames) -> SufficientStats:
    """Stats of ``frames`` forwarded through the UBM network with zero factors."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        return SufficientStats.zeros(ubm.B.shape[0], ubm.B.shape[1])
    y = augment(network_regressors(ubm.params, frames))
    return accumulate_stats(y, frames)


def enrol_map_prior(ubm: UbmModel, enrol_stats: SufficientStats, model_id: str = "") -> SpeakerModel:
    """MAP weights with the UBM weights as prior mean."""
    B = posterior(enrol_stats, ubm.lam0, ubm.beta, ubm.B).mean
    return SpeakerModel(model_id, B, "map_prior")


def enrol_interpolated(ubm: UbmModel, enrol_stats: SufficientStats, alpha: float = 0.5,
                       normalize_stats: bool = False, model_id: str = "") -> SpeakerModel:
    """Zero-mean MAP weights from ``alpha*UBM + (1-alpha)*speaker`` stats.

    With ``normalize_stats`` each side is divided by its own frame count
    before mixing; the default mixes raw sums.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    ubm_stats, spk_stats = ubm.stats, enrol_stats
    if normalize_stats:
        ubm_stats, spk_stats = ubm_stats.normalized(), spk_stats.normalized()
    mixed = ubm_stats.scaled(alpha) + spk_stats.scaled(1.0 - alpha)
    B = posterior(mixed, ubm.lam0, ubm.beta).mean
    return SpeakerModel(model_id, B, "interpolated", alpha=alpha)


def _fit_tied_factor(params: NetworkParams, frames, which: int, iterations: int, rate: float) -> np.ndarray:
    """Gradient steps on one tied factor (1 = session, 2 = speaker) shared
    by all ``frames``; the other factor stays at zero, the network is frozen."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[0]
    data = Dataset(frames, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), 1, 1)
    Z = LatentFactors(np.zeros((1, params.r1)), np.zeros((1, params.r2)))
    for _ in range(iterations):
        G1, G2, _ = factor_gradients(params, data, Z)
        if which == 1:
            Z = LatentFactors(Z.Z1 - rate * G1, Z.Z2)
        else:
            Z = LatentFactors(Z.Z1, Z.Z2 - rate * G2)
    return (Z.Z1 if which == 1 else Z.Z2)[0].copy()


def enrol_factor(ubm: UbmModel, frames, iterations: int = 20, rate: float = 1e-3,
                 model_id: str = "") -> SpeakerModel:
    """Fit a speaker factor by tied gradient steps with everything else frozen.

    The factor starts at zero; session factors stay at zero.
    """
    if ubm.params.r2 == 0:
        raise ValueError("the UBM network has no speaker factor to adapt")
    z2 = _fit_tied_factor(ubm.params, frames, 2, iterations, rate)
    return SpeakerModel(model_id, ubm.B.copy(), "factor", z2=z2)


def estimate_session_factor(params: NetworkParams, frames, iterations: int = 20, rate: float = 1e-3) -> np.ndarray:
    """Session factor for an unseen utterance, fitted like ``enrol_factor``."""
    if params.r1 == 0:
        raise ValueError("the network has no session factor to estimate")
    return _fit_tied_factor(params, frames, 1, iterations, rate)


def enrol(ubm: UbmModel, frames, method: str = "interpolated", alpha: float = 0.5,
          normalize_stats: bool = False, iterations: int = 20, rate: float = 1e-3,
          model_id: str = "") -> SpeakerModel:
    if method == "map_prior":
        return enrol_map_prior(ubm, compute_enrol_stats(ubm, frames), model_id)
    if method == "interpolated":
        return enrol_interpolated(ubm, compute_enrol_stats(ubm, frames), alpha, normalize_stats, model_id)
    if method == "factor":
        return enrol_factor(ubm, frames, iterations, rate, model_id)
    raise ValueError(f"unknown adaptation method {method!r}")
