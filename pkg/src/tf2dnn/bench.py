"""Paired DNN vs TF2-DNN comparison on a synthetic corpus."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .adaptation import build_ubm, enrol
from .metrics import summarize
from .scoring import ScoringConfig, Trial, score_trialset
from .synth import SynthConfig, SynthCorpus, generate, model_id, trial_list, utterances
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class EnrolConfig:
    method: str = "interpolated"
    alpha: float = 0.5
    normalize_stats: bool = False
    lam0: float = 1.0
    stats_factors: str = "trained"
    iterations: int = 20
    rate: float = 1e-3


@dataclass
class BenchRow:
    system: str
    r1: int
    r2: int
    eer: float
    min_dcf08: float
    min_dcf10: float
    tgt_mean: float
    non_mean: float
    final_loss: float
    seconds: float

    def cells(self) -> list[str]:
        r1 = "-" if self.system == "DNN" else str(self.r1)
        r2 = "-" if self.system == "DNN" else str(self.r2)
        return [self.system, r1, r2, f"{100 * self.eer:.2f}", f"{self.min_dcf08:.4f}", f"{self.min_dcf10:.4f}",
                f"{self.tgt_mean:.6g}", f"{self.non_mean:.6g}", f"{self.final_loss:.6g}"]


BENCH_COLUMNS = ["system", "R1", "R2", "EER%", "minDCF08", "minDCF10", "tgt_mean", "non_mean", "final_loss"]


def bench_synth_config(seed: int = 0) -> SynthConfig:
    return SynthConfig(seed=seed)


def bench_train_config(seed: int = 0) -> TrainConfig:
    """Desk-scale network used by the benchmark (narrower than the library default)."""
    return TrainConfig(epochs=15, batch_size=128, encoder=(64,), bottleneck=5, decoder=(64,),
                       lr_theta=2e-3, lr_session=2e-3, lr_speaker=2e-4, seed=seed)


def evaluate_system(corpus: SynthCorpus, cfg: TrainConfig, enrol_cfg: EnrolConfig, scoring: ScoringConfig | None = None,
                    name: str = "TF2-DNN") -> BenchRow:
    t0 = time.perf_counter()
    params, factors, trace = train(cfg, corpus.train)
    ubm = build_ubm(params, factors, corpus.train, enrol_cfg.lam0, enrol_cfg.stats_factors)
    models = {}
    for s in sorted(set(corpus.enrol.speaker.tolist())):
        frames = corpus.enrol.frames[corpus.enrol.speaker == s]
        models[model_id(s)] = enrol(ubm, frames, enrol_cfg.method, enrol_cfg.alpha, enrol_cfg.normalize_stats,
                                    enrol_cfg.iterations, enrol_cfg.rate, model_id(s))
    utt_frames = {utt: x for utt, _, x in utterances(corpus.test)}
    trials = [Trial(m, u, utt_frames[u], lab) for m, u, lab in trial_list(corpus.enrol, corpus.test)]
    records = score_trialset(models, ubm, trials, scoring)
    tgt = np.array([r.score for r in records if r.label == "tgt"])
    non = np.array([r.score for r in records if r.label == "non"])
    s = summarize(tgt, non)
    return BenchRow(name, cfg.r1, cfg.r2, s.eer, s.min_dcf08, s.min_dcf10, float(tgt.mean()), float(non.mean()),
                    trace[-1], time.perf_counter() - t0)


def run_bench(synth_cfg: SynthConfig, train_cfg: TrainConfig, grid, enrol_cfg: EnrolConfig | None = None,
              scoring: ScoringConfig | None = None) -> list[BenchRow]:
    """Baseline DNN row followed by one TF2-DNN row per (r1, r2) grid point.

    Every system is trained with the same seed on the same corpus.
    """
    enrol_cfg = enrol_cfg or EnrolConfig()
    corpus = generate(synth_cfg)
    rows = []
    dnn_enrol = replace(enrol_cfg, method="interpolated") if enrol_cfg.method == "factor" else enrol_cfg
    rows.append(evaluate_system(corpus, replace(train_cfg, r1=0, r2=0), dnn_enrol, scoring, "DNN"))
    log.info("DNN done: EER %.4f", rows[-1].eer)
    for r1, r2 in grid:
        rows.append(evaluate_system(corpus, replace(train_cfg, r1=r1, r2=r2), enrol_cfg, scoring, "TF2-DNN"))
        log.info("TF2-DNN(%d,%d) done: EER %.4f", r1, r2, rows[-1].eer)
    return rows


def format_rows(rows) -> str:
    lines = ["\t".join(BENCH_COLUMNS)]
    lines += ["\t".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"
