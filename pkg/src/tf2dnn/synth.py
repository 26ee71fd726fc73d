"""Synthetic multi-speaker, multi-session feature corpus.

Frames follow a tied latent-factor generator::

    x_t = warp(m + a_spk U h_s + a_ses G c_f + a_frm A p_t) + noise * e_t

with h_s, c_f, p_t, e_t standard normal, shared per speaker, per session and
per frame respectively. ``warp`` is softplus when enabled, identity
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Rng, softplus
from .trainer import Dataset


@dataclass
class SynthConfig:
    dim: int = 20
    n_speakers: int = 50
    sessions_per_speaker: int = 10
    frames_per_session: int = 200
    speaker_rank: int = 5
    speaker_scale: float = 2.0
    session_rank: int = 5
    session_scale: float = 1.0
    frame_rank: int = 10
    frame_scale: float = 1.0
    noise: float = 0.3
    warp: bool = False
    seed: int = 0
    train_sessions: int = 7
    enrol_sessions: int = 1
    enrol_utterances: int = 3
    test_sessions: int = 2

    def __post_init__(self):
        counts = ("dim", "n_speakers", "sessions_per_speaker", "frames_per_session", "train_sessions",
                  "enrol_sessions", "enrol_utterances", "test_sessions")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("speaker_rank", "session_rank", "frame_rank"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("speaker_scale", "session_scale", "frame_scale", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.train_sessions + self.enrol_sessions + self.test_sessions != self.sessions_per_speaker:
            raise ValueError("train + enrol + test sessions must equal sessions_per_speaker")
        if self.enrol_sessions * self.frames_per_session < self.enrol_utterances:
            raise ValueError("not enough enrollment frames to cut the requested utterances")


@dataclass
class SynthCorpus:
    """Train split plus held-out enrollment and test utterances.

    In ``enrol`` and ``test`` every session label is one utterance and the
    speaker labels are the global speaker indices.
    """

    train: Dataset
    enrol: Dataset
    test: Dataset


def _loading(rng: Rng, dim: int, rank: int) -> np.ndarray:
    if rank == 0:
        return np.zeros((dim, 0))
    return rng.gaussian((dim, rank), 1.0) / np.sqrt(rank)


def generate(cfg: SynthConfig) -> SynthCorpus:
    rng = Rng(cfg.seed)
    model_rng = rng.fork("model")
    m = model_rng.gaussian(cfg.dim, 1.0)
    U = _loading(model_rng, cfg.dim, cfg.speaker_rank)
    G = _loading(model_rng, cfg.dim, cfg.session_rank)
    A = _loading(model_rng, cfg.dim, cfg.frame_rank)
    h = model_rng.gaussian((cfg.n_speakers, cfg.speaker_rank), 1.0)

    frame_rng = rng.fork("frames")
    splits = {"train": [], "enrol": [], "test": []}
    n_enrol_sessions_end = cfg.train_sessions + cfg.enrol_sessions
    for s in range(cfg.n_speakers):
        spk_offset = cfg.speaker_scale * (U @ h[s])
        enrol_frames = []
        for k in range(cfg.sessions_per_speaker):
            c = frame_rng.gaussian(cfg.session_rank, 1.0)
            p = frame_rng.gaussian((cfg.frames_per_session, cfg.frame_rank), 1.0)
            e = frame_rng.gaussian((cfg.frames_per_session, cfg.dim), 1.0)
            mean = m + spk_offset + cfg.session_scale * (G @ c)
            clean = mean + cfg.frame_scale * (p @ A.T)
            if cfg.warp:
                clean = softplus(clean)
            x = clean + cfg.noise * e
            if k < cfg.train_sessions:
                splits["train"].append((s, x))
            elif k < n_enrol_sessions_end:
                enrol_frames.append(x)
            else:
                splits["test"].append((s, x))
        for utt in np.array_split(np.vstack(enrol_frames), cfg.enrol_utterances):
            splits["enrol"].append((s, utt))

    def to_dataset(items):
        frames = np.vstack([x for _, x in items])
        session = np.concatenate([np.full(len(x), f) for f, (_, x) in enumerate(items)])
        speaker = np.concatenate([np.full(len(x), s) for s, x in items])
        return Dataset(frames, session, speaker, len(items), cfg.n_speakers)

    return SynthCorpus(*(to_dataset(splits[k]) for k in ("train", "enrol", "test")))


def model_id(speaker: int) -> str:
    return f"spk{speaker:04d}"


def utterance_id(session: int) -> str:
    return f"utt{session:05d}"


def utterances(data: Dataset) -> list[tuple[str, int, np.ndarray]]:
    """(utterance id, speaker, frames) for every non-empty session."""
    out = []
    for f in range(data.n_sessions):
        idx = data.session_frames(f)
        if idx.size:
            out.append((utterance_id(f), int(data.speaker[idx[0]]), data.frames[idx]))
    return out


def trial_list(enrol: Dataset, test: Dataset) -> list[tuple[str, str, str]]:
    """Every enrolled speaker against every test utterance, labeled tgt/non."""
    speakers = sorted(set(enrol.speaker.tolist()))
    trials = []
    for s in speakers:
        for utt, spk, _ in utterances(test):
            trials.append((model_id(s), utt, "tgt" if spk == s else "non"))
    return trials
