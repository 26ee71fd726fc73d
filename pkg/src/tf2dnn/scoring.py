"""Trial scoring: log-likelihood ratio of speaker-adapted vs UBM head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .adaptation import SpeakerModel, UbmModel, estimate_session_factor, network_regressors
from .network import sample_masks
from .numeric import Rng, derive_seed
from .regression_head import head_loglik

LABELS = ("tgt", "non", "unk")


@dataclass
class Trial:
    model_id: str
    utt_id: str
    frames: np.ndarray | None
    label: str = "unk"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass
class TrialScore:
    llr: float
    n_frames: int
    method: str = "deterministic"
    samples: int = 1


@dataclass
class ScoreRecord:
    model_id: str
    utt_id: str
    label: str
    score: float | None
    error: str | None = None


@dataclass
class ScoringConfig:
    mc_p: float = 0.0
    mc_samples: int = 1
    seed: int = 0
    shared_masks: bool = False
    normalize: bool = True
    session_iterations: int = 0
    session_rate: float = 1e-3


def _frames(frames, ubm):
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("cannot score an empty utterance")
    if frames.shape[1] != ubm.params.input_dim:
        raise ValueError(f"frames have dimension {frames.shape[1]}, model expects {ubm.params.input_dim}")
    return frames


def _check_model(spk, ubm):
    if spk.B.shape != ubm.B.shape:
        raise ValueError(f"speaker weights {spk.B.shape} do not match UBM {ubm.B.shape}")


def _session_factor(ubm, frames, iterations, rate):
    """Test-utterance session factor, or None (zero) when disabled."""
    if iterations <= 0:
        return None
    return estimate_session_factor(ubm.params, frames, iterations, rate)


def _frame_logliks(spk: SpeakerModel, ubm: UbmModel, frames, masks=None, z1=None):
    """Per-frame log-likelihoods under the speaker and UBM heads."""
    y_ubm = network_regressors(ubm.params, frames, z1=z1, masks=masks)
    y_spk = y_ubm if spk.z2 is None else network_regressors(ubm.params, frames, z1=z1, z2=spk.z2, masks=masks)
    ll_spk = head_loglik(ubm.head.with_weights(spk.B), y_spk, frames)
    ll_ubm = head_loglik(ubm.head, y_ubm, frames)
    return ll_spk, ll_ubm


def _reduce(diff, normalize):
    return float(np.mean(diff)) if normalize else float(np.sum(diff))


def score_trial(spk: SpeakerModel, ubm: UbmModel, frames, normalize: bool = True, session_iterations: int = 0,
                session_rate: float = 1e-3) -> TrialScore:
    """Per-frame mean log-likelihood ratio (sum if ``normalize`` is False).

    Both heads share the UBM's Psi; regressors come from a zero-factor
    forward pass (with the speaker factor for factor-adapted models). With
    ``session_iterations`` > 0 a session factor is first fitted to the test
    utterance and fed to both passes.
    """
    frames = _frames(frames, ubm)
    _check_model(spk, ubm)
    z1 = _session_factor(ubm, frames, session_iterations, session_rate)
    ll_spk, ll_ubm = _frame_logliks(spk, ubm, frames, z1=z1)
    return TrialScore(_reduce(ll_spk - ll_ubm, normalize), frames.shape[0])


def score_trial_mc(spk: SpeakerModel, ubm: UbmModel, frames, p: float, L: int, seed: int,
                   shared_masks: bool = False, normalize: bool = True, session_iterations: int = 0,
                   session_rate: float = 1e-3) -> TrialScore:
    """Log-likelihood ratio with each head's frame likelihood averaged over
    ``L`` dropout masks (average taken in the probability domain).

    Masks are drawn per frame and per sample unless ``shared_masks``, in which
    case one mask per sample is used for the whole utterance. The same mask
    sample feeds both heads.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if p == 0.0:
        return score_trial(spk, ubm, frames, normalize, session_iterations, session_rate)
    frames = _frames(frames, ubm)
    _check_model(spk, ubm)
    z1 = _session_factor(ubm, frames, session_iterations, session_rate)
    params = ubm.params.with_dropout(p)
    if not any(s.dropout_p > 0 for s in params.specs):
        raise ValueError("network has no dropout sites")
    mc_ubm = UbmModel(params, ubm.head, ubm.stats, ubm.factors, ubm.stats_factors)
    rng = Rng(seed)
    n = frames.shape[0]
    spk_ll = np.empty((L, n))
    ubm_ll = np.empty((L, n))
    for l in range(L):
        masks = sample_masks(params, n, rng, shared=shared_masks)
        spk_ll[l], ubm_ll[l] = _frame_logliks(spk, mc_ubm, frames, masks, z1)
    log_l = math.log(L)
    diff = (logsumexp(spk_ll, axis=0) - log_l) - (logsumexp(ubm_ll, axis=0) - log_l)
    return TrialScore(_reduce(diff, normalize), n, "mc-dropout", L)


def score_trialset(models: dict[str, SpeakerModel], ubm: UbmModel, trials, config: ScoringConfig | None = None):
    """Score every trial; failures become error records instead of aborting.

    MC seeds derive from (master seed, model id, utterance id), so results do
    not depend on trial order. Deterministic scoring reuses UBM-side work per
    utterance, which yields the same numbers as scoring each trial alone.
    """
    config = config or ScoringConfig()
    records = []
    cache: dict[str, tuple] = {}
    for trial in trials:
        try:
            spk = models.get(trial.model_id)
            if spk is None:
                raise KeyError(f"unknown model {trial.model_id!r}")
            if trial.frames is None:
                raise KeyError(f"unknown utterance {trial.utt_id!r}")
            _check_model(spk, ubm)
            if config.mc_p > 0.0:
                seed = derive_seed(config.seed, trial.model_id, trial.utt_id)
                score = score_trial_mc(spk, ubm, trial.frames, config.mc_p, config.mc_samples, seed,
                                       config.shared_masks, config.normalize, config.session_iterations,
                                       config.session_rate).llr
            elif spk.z2 is not None:
                score = score_trial(spk, ubm, trial.frames, config.normalize, config.session_iterations,
                                    config.session_rate).llr
            else:
                if trial.utt_id not in cache:
                    frames = _frames(trial.frames, ubm)
                    z1 = _session_factor(ubm, frames, config.session_iterations, config.session_rate)
                    y = network_regressors(ubm.params, frames, z1=z1)
                    cache[trial.utt_id] = (frames, y, head_loglik(ubm.head, y, frames))
                frames, y, ll_ubm = cache[trial.utt_id]
                ll_spk = head_loglik(ubm.head.with_weights(spk.B), y, frames)
                score = _reduce(ll_spk - ll_ubm, config.normalize)
            records.append(ScoreRecord(trial.model_id, trial.utt_id, trial.label, score))
        except (KeyError, ValueError) as exc:
            records.append(ScoreRecord(trial.model_id, trial.utt_id, trial.label, None, str(exc)))
    return records


def format_score_line(rec: ScoreRecord) -> str:
    return f"{rec.model_id}\t{rec.utt_id}\t{rec.score:.9g}\t{rec.label}"


def write_score_table(records, fh) -> int:
    """Write successful records as TSV; returns the number written."""
    n = 0
    for rec in records:
        if rec.score is None:
            continue
        fh.write(format_score_line(rec) + "\n")
        n += 1
    return n


def read_score_table(fh) -> list[ScoreRecord]:
    records = []
    for lineno, line in enumerate(fh, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        model_id, utt_id, score, label = parts
        if label not in LABELS:
            raise ValueError(f"line {lineno}: bad label {label!r}")
        try:
            value = float(score)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad score {score!r}") from exc
        records.append(ScoreRecord(model_id, utt_id, label, value))
    return records
