"""Joint estimation of network weights and tied session/speaker factors.

Each epoch runs minibatch Adam updates on the network parameters (frames
drawn in a seeded random order, each frame seeing the current factors of its
session and speaker), followed by one plain gradient step on every factor
whose gradient is the sum of per-frame gradients over the frames tied to it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import (
    AdamState,
    NetworkParams,
    adam_update,
    autoencoder_specs,
    backward,
    forward,
    init_params,
    sample_masks,
)
from .numeric import Rng

log = logging.getLogger(__name__)

# frames per forward/backward chunk in full-dataset passes
CHUNK = 4096


@dataclass
class Dataset:
    """Frames with 0-based session and speaker labels."""

    frames: np.ndarray
    session: np.ndarray
    speaker: np.ndarray
    n_sessions: int
    n_speakers: int

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        self.session = np.asarray(self.session, dtype=np.int64)
        self.speaker = np.asarray(self.speaker, dtype=np.int64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a (T, D) array")
        n = self.frames.shape[0]
        if self.session.shape != (n,) or self.speaker.shape != (n,):
            raise ValueError("one session and one speaker label per frame required")
        if n and (self.session.min() < 0 or self.session.max() >= self.n_sessions):
            raise ValueError("session label out of range")
        if n and (self.speaker.min() < 0 or self.speaker.max() >= self.n_speakers):
            raise ValueError("speaker label out of range")
        owner = np.full(self.n_sessions, -1)
        owner[self.session] = self.speaker
        if np.any(owner[self.session] != self.speaker):
            raise ValueError("a session maps to more than one speaker")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def session_frames(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.session == f)

    def speaker_frames(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.speaker == s)

    def session_speaker(self) -> np.ndarray:
        """Speaker of each session (-1 for sessions without frames)."""
        owner = np.full(self.n_sessions, -1)
        owner[self.session] = self.speaker
        return owner

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.frames[idx], self.session[idx], self.speaker[idx], self.n_sessions, self.n_speakers)


@dataclass
class LatentFactors:
    Z1: np.ndarray  # (F, r1) session factors
    Z2: np.ndarray  # (S, r2) speaker factors

    def copy(self) -> "LatentFactors":
        return LatentFactors(self.Z1.copy(), self.Z2.copy())


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 256
    lr_theta: float = 1e-3
    lr_session: float = 1e-2
    lr_speaker: float = 1e-2
    prior_theta: float = 0.05
    prior_session: float = 1.0
    prior_speaker: float = 1.0
    seed: int = 0
    encoder: tuple[int, ...] = (500, 500)
    bottleneck: int = 15
    decoder: tuple[int, ...] = (500, 500)
    r1: int = 15
    r2: int = 50
    tf2_layers: tuple[int, ...] | None = None
    dropout_p: float = 0.0
    dropout_sites: tuple[int, ...] | None = None
    # optional L2 pull of the factors toward zero, weights 1/prior_session, 1/prior_speaker
    factor_l2: bool = False
    specs: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("lr_theta", "lr_session", "lr_speaker"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("prior_theta", "prior_session", "prior_speaker"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.r1 < 0 or self.r2 < 0:
            raise ValueError("factor dimensions must be >= 0")

    def layer_specs(self, input_dim: int):
        if self.specs is not None:
            return tuple(self.specs)
        return autoencoder_specs(
            input_dim,
            tuple(self.encoder),
            self.bottleneck,
            tuple(self.decoder),
            tf2_layers=() if (self.r1 == 0 and self.r2 == 0) else self.tf2_layers,
            dropout_p=self.dropout_p,
            dropout_sites=self.dropout_sites,
        )


def init(cfg: TrainConfig, input_dim: int, n_sessions: int, n_speakers: int):
    """Draw the network from N(0, prior_theta^2) (zero biases) and the
    factors from N(0, prior_session^2), N(0, prior_speaker^2).

    The priors are used as standard deviations.
    """
    rng = Rng(cfg.seed)
    params = init_params(cfg.layer_specs(input_dim), cfg.r1, cfg.r2, cfg.prior_theta, rng.fork("theta"))
    z_rng = rng.fork("factors")
    Z1 = z_rng.gaussian((n_sessions, cfg.r1), cfg.prior_session)
    Z2 = z_rng.gaussian((n_speakers, cfg.r2), cfg.prior_speaker)
    return params, LatentFactors(Z1, Z2)


def _gather(Z, labels):
    return Z[labels] if Z.shape[1] else None


def batch_gradient(params: NetworkParams, data: Dataset, Z: LatentFactors, idx, masks=None):
    """Forward/backward on frames ``idx``; returns (mean cost, GradientBundle)
    for the mean per-frame MSE over the batch."""
    x = data.frames[idx]
    acts = forward(params, x, _gather(Z.Z1, data.session[idx]), _gather(Z.Z2, data.speaker[idx]), masks)
    diff = acts.output - x
    n, d = x.shape
    cost = float(np.sum(diff * diff)) / (n * d)
    return cost, backward(params, acts, 2.0 * diff / (d * n))


def step_theta(params: NetworkParams, adam: AdamState, data: Dataset, Z: LatentFactors, batch_indices,
               rng: Rng | None = None, lr: float | None = None) -> float:
    """One Adam update of the network parameters on a minibatch (in place).

    Returns the batch cost before the update. ``rng`` supplies dropout masks
    when any layer has dropout.
    """
    idx = np.asarray(batch_indices)
    if idx.size == 0:
        raise ValueError("empty minibatch")
    masks = sample_masks(params, idx.size, rng) if rng is not None else None
    cost, grads = batch_gradient(params, data, Z, idx, masks)
    adam_update(adam, params, grads, lr)
    return cost


def factor_gradients(params: NetworkParams, data: Dataset, Z: LatentFactors):
    """Tied gradients of the summed per-frame cost.

    Per-frame factor gradients are accumulated into their session/speaker
    rows in ascending frame order, so the result does not depend on how
    frames are chunked. Returns ``(G1, G2, total_cost)`` where total_cost is
    the mean per-frame cost.
    """
    G1 = np.zeros_like(Z.Z1)
    G2 = np.zeros_like(Z.Z2)
    total = 0.0
    d = data.dim
    for start in range(0, data.n_frames, CHUNK):
        idx = np.arange(start, min(start + CHUNK, data.n_frames))
        x = data.frames[idx]
        acts = forward(params, x, _gather(Z.Z1, data.session[idx]), _gather(Z.Z2, data.speaker[idx]))
        diff = acts.output - x
        total += float(np.sum(diff * diff))
        grads = backward(params, acts, 2.0 * diff / d)
        if params.r1:
            np.add.at(G1, data.session[idx], grads.dz1)
        if params.r2:
            np.add.at(G2, data.speaker[idx], grads.dz2)
    return G1, G2, total / max(data.n_frames * d, 1)


def step_factors(params: NetworkParams, data: Dataset, Z: LatentFactors, lr_session: float, lr_speaker: float,
                 l2_session: float = 0.0, l2_speaker: float = 0.0):
    """Plain gradient step on every session and speaker factor.

    Both aggregated gradients are computed from the same pre-update factors.
    Returns ``(new_factors, mean_cost)``; ``params`` is not touched.
    """
    G1, G2, cost = factor_gradients(params, data, Z)
    if l2_session:
        G1 += l2_session * Z.Z1
    if l2_speaker:
        G2 += l2_speaker * Z.Z2
    return LatentFactors(Z.Z1 - lr_session * G1, Z.Z2 - lr_speaker * G2), cost


def dataset_cost(params: NetworkParams, data: Dataset, Z: LatentFactors) -> float:
    """Mean per-frame MSE with dropout off."""
    total = 0.0
    for start in range(0, data.n_frames, CHUNK):
        idx = np.arange(start, min(start + CHUNK, data.n_frames))
        x = data.frames[idx]
        out = forward(params, x, _gather(Z.Z1, data.session[idx]), _gather(Z.Z2, data.speaker[idx])).output
        total += float(np.sum((out - x) ** 2))
    return total / (data.n_frames * data.dim)


def train(cfg: TrainConfig, data: Dataset, callback=None):
    """Run the two-step training loop.

    Returns ``(params, factors, trace)`` where ``trace[n]`` is the mean
    dropout-free training cost seen by epoch ``n``'s factor pass (after that
    epoch's network updates, before its factor update).
    """
    params, Z = init(cfg, data.dim, data.n_sessions, data.n_speakers)
    adam = AdamState(lr=cfg.lr_theta)
    rng = Rng(cfg.seed).fork("minibatch")
    drop_rng = rng.fork("dropout") if any(s.dropout_p > 0 for s in params.specs) else None
    l2_1 = 1.0 / cfg.prior_session if cfg.factor_l2 and cfg.prior_session > 0 else 0.0
    l2_2 = 1.0 / cfg.prior_speaker if cfg.factor_l2 and cfg.prior_speaker > 0 else 0.0
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(data.n_frames)
        for start in range(0, data.n_frames, cfg.batch_size):
            step_theta(params, adam, data, Z, np.sort(order[start:start + cfg.batch_size]), drop_rng)
        if params.has_factors:
            Z, cost = step_factors(params, data, Z, cfg.lr_session, cfg.lr_speaker, l2_1, l2_2)
        else:
            cost = dataset_cost(params, data, Z)
        if not np.isfinite(cost):
            raise FloatingPointError(f"training cost became non-finite at epoch {epoch + 1}")
        trace.append(cost)
        log.info("epoch %d cost %.6f", epoch + 1, cost)
        if callback is not None:
            callback(epoch + 1, cost)
    return params, Z, trace
