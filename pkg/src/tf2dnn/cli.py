"""Command-line entry point: synth, train-ubm, enrol, score, eval, bench."""

from __future__ import annotations

import argparse
import contextlib
import io
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .adaptation import METHODS, STATS_FACTORS, build_ubm, enrol
from .bench import EnrolConfig, bench_synth_config, bench_train_config, format_rows, run_bench
from .metrics import det_points, summarize
from .scoring import ScoringConfig, Trial, read_score_table, score_trialset, write_score_table
from .storage import (
    ArchiveError,
    ModelFormatError,
    atomic_write,
    load_model,
    model_digest,
    read_archive,
    read_trial_list,
    save_model,
    trial_list_text,
    write_archive,
)
from .synth import SynthConfig, generate, model_id, trial_list, utterances
from .trainer import TrainConfig, train

log = logging.getLogger("tf2dnn")

MODEL_SUFFIX = ".tf2m"
BENCH_GRID = ((5, 10), (10, 20))


class UsageError(Exception):
    """Bad flag values; reported with exit code 2."""


def _defaults_table() -> str:
    lines = ["defaults:"]
    for cls in (SynthConfig, TrainConfig, EnrolConfig, ScoringConfig):
        lines.append(f"  {cls.__name__}")
        for f in fields(cls):
            if f.name == "specs":
                continue
            lines.append(f"    {f.name:<22} {f.default!r}")
    lines.append(f"  bench grid (r1:r2)       {','.join(f'{a}:{b}' for a, b in BENCH_GRID)}")
    return "\n".join(lines)


def _int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _optional_int_tuple(text: str):
    return None if text.strip().lower() == "default" else _int_tuple(text)


def _grid(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(","):
        try:
            a, b = item.split(":")
            out.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"grid points look like r1:r2, got {item!r}") from None
    return tuple(out)


def _add_synth_flags(p):
    d = SynthConfig()
    g = p.add_argument_group("synthetic corpus")
    g.add_argument("--dim", type=int, default=d.dim)
    g.add_argument("--speakers", type=int, default=d.n_speakers)
    g.add_argument("--sessions-per-speaker", type=int, default=d.sessions_per_speaker)
    g.add_argument("--frames-per-session", type=int, default=d.frames_per_session)
    g.add_argument("--speaker-rank", type=int, default=d.speaker_rank)
    g.add_argument("--speaker-scale", type=float, default=d.speaker_scale)
    g.add_argument("--session-rank", type=int, default=d.session_rank)
    g.add_argument("--session-scale", type=float, default=d.session_scale)
    g.add_argument("--frame-rank", type=int, default=d.frame_rank)
    g.add_argument("--frame-scale", type=float, default=d.frame_scale)
    g.add_argument("--noise", type=float, default=d.noise)
    g.add_argument("--warp", action="store_true", help="softplus-warp the generated means")
    g.add_argument("--train-sessions", type=int, default=d.train_sessions)
    g.add_argument("--enrol-sessions", type=int, default=d.enrol_sessions)
    g.add_argument("--enrol-utterances", type=int, default=d.enrol_utterances)
    g.add_argument("--test-sessions", type=int, default=d.test_sessions)


def _synth_config(a) -> SynthConfig:
    return SynthConfig(dim=a.dim, n_speakers=a.speakers, sessions_per_speaker=a.sessions_per_speaker,
                       frames_per_session=a.frames_per_session, speaker_rank=a.speaker_rank,
                       speaker_scale=a.speaker_scale, session_rank=a.session_rank, session_scale=a.session_scale,
                       frame_rank=a.frame_rank, frame_scale=a.frame_scale, noise=a.noise, warp=a.warp, seed=a.seed,
                       train_sessions=a.train_sessions, enrol_sessions=a.enrol_sessions,
                       enrol_utterances=a.enrol_utterances, test_sessions=a.test_sessions)


def _add_train_flags(p, defaults: TrainConfig):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=defaults.epochs)
    g.add_argument("--batch-size", type=int, default=defaults.batch_size)
    g.add_argument("--lr-theta", type=float, default=defaults.lr_theta)
    g.add_argument("--lr-session", type=float, default=defaults.lr_session)
    g.add_argument("--lr-speaker", type=float, default=defaults.lr_speaker)
    g.add_argument("--prior-theta", type=float, default=defaults.prior_theta)
    g.add_argument("--prior-session", type=float, default=defaults.prior_session)
    g.add_argument("--prior-speaker", type=float, default=defaults.prior_speaker)
    g.add_argument("--encoder", type=_int_tuple, default=defaults.encoder, help="hidden widths, e.g. 500,500")
    g.add_argument("--bottleneck", type=int, default=defaults.bottleneck)
    g.add_argument("--decoder", type=_int_tuple, default=defaults.decoder)
    g.add_argument("--r1", type=int, default=defaults.r1, help="session factor dimension")
    g.add_argument("--r2", type=int, default=defaults.r2, help="speaker factor dimension")
    g.add_argument("--tf2-layers", type=_optional_int_tuple, default=None,
                   help="layer indices with factor inputs (default: first decoder layer)")
    g.add_argument("--dropout-p", type=float, default=defaults.dropout_p)
    g.add_argument("--dropout-sites", type=_optional_int_tuple, default=None,
                   help="layer indices whose outputs get dropout (default: last encoder, first decoder)")
    g.add_argument("--factor-l2", action="store_true", help="add the factor prior gradient in the factor step")
    g.add_argument("--baseline-dnn", action="store_true", help="train without factor inputs (r1 = r2 = 0)")


def _train_config(a) -> TrainConfig:
    r1, r2 = (0, 0) if a.baseline_dnn else (a.r1, a.r2)
    return TrainConfig(epochs=a.epochs, batch_size=a.batch_size, lr_theta=a.lr_theta, lr_session=a.lr_session,
                       lr_speaker=a.lr_speaker, prior_theta=a.prior_theta, prior_session=a.prior_session,
                       prior_speaker=a.prior_speaker, seed=a.seed, encoder=a.encoder, bottleneck=a.bottleneck,
                       decoder=a.decoder, r1=r1, r2=r2, tf2_layers=a.tf2_layers, dropout_p=a.dropout_p,
                       dropout_sites=a.dropout_sites, factor_l2=a.factor_l2)


def _add_enrol_flags(p):
    d = EnrolConfig()
    g = p.add_argument_group("enrolment")
    g.add_argument("--method", choices=METHODS, default=d.method)
    g.add_argument("--alpha", type=float, default=d.alpha, help="UBM weight for interpolated stats")
    g.add_argument("--normalize-stats", action="store_true", help="per-count normalize before interpolating")
    g.add_argument("--iterations", type=int, default=d.iterations, help="factor method: gradient steps")
    g.add_argument("--rate", type=float, default=d.rate, help="factor method: step size")


def _enrol_config(a, lam0=EnrolConfig.lam0, stats_factors=EnrolConfig.stats_factors) -> EnrolConfig:
    if not 0.0 <= a.alpha <= 1.0:
        raise UsageError("--alpha must be in [0, 1]")
    if a.iterations < 1 or a.rate < 0:
        raise UsageError("--iterations must be >= 1 and --rate >= 0")
    return EnrolConfig(a.method, a.alpha, a.normalize_stats, lam0, stats_factors, a.iterations, a.rate)


def _add_scoring_flags(p):
    d = ScoringConfig()
    g = p.add_argument_group("scoring")
    g.add_argument("--mc-dropout", type=float, default=d.mc_p, metavar="P",
                   help="dropout probability for sampled scoring (0 = deterministic)")
    g.add_argument("--mc-samples", type=int, default=d.mc_samples, metavar="L")
    g.add_argument("--shared-masks", action="store_true", help="one mask per utterance and sample")
    g.add_argument("--unnormalized", action="store_true", help="emit frame sums instead of per-frame means")
    g.add_argument("--session-iterations", type=int, default=d.session_iterations,
                   help="fit a session factor to each test utterance first (0 = zero factor)")
    g.add_argument("--session-rate", type=float, default=d.session_rate)


def _scoring_config(a) -> ScoringConfig:
    if not 0.0 <= a.mc_dropout < 1.0:
        raise UsageError("--mc-dropout must be in [0, 1)")
    if a.mc_samples < 1:
        raise UsageError("--mc-samples must be >= 1")
    if a.session_iterations < 0 or a.session_rate < 0:
        raise UsageError("--session-iterations and --session-rate must be >= 0")
    return ScoringConfig(a.mc_dropout, a.mc_samples, a.seed, a.shared_masks, not a.unnormalized,
                         a.session_iterations, a.session_rate)


def _validated(build, a):
    try:
        return build(a)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# -- commands ------------------------------------------------------------------


def cmd_synth(a) -> int:
    cfg = _validated(_synth_config, a)
    corpus = generate(cfg)
    os.makedirs(a.out, exist_ok=True)
    write_archive(os.path.join(a.out, "train.tfda"), corpus.train)
    write_archive(os.path.join(a.out, "enrol.tfda"), corpus.enrol)
    write_archive(os.path.join(a.out, "test.tfda"), corpus.test)
    trials = trial_list(corpus.enrol, corpus.test)
    atomic_write(os.path.join(a.out, "trials.tsv"), trial_list_text(trials))
    log.info("wrote %d train frames, %d trials to %s", corpus.train.n_frames, len(trials), a.out)
    return 0


def cmd_train_ubm(a) -> int:
    cfg = _validated(_train_config, a)
    if a.lam0 <= 0:
        raise UsageError("--lam0 must be > 0")
    data = read_archive(a.train)
    params, factors, trace = train(cfg, data)
    ubm = build_ubm(params, factors, data, a.lam0, a.stats_factors)
    save_model(a.out, ubm)
    if a.loss_trace:
        atomic_write(a.loss_trace, "".join(f"{i + 1}\t{c!r}\n" for i, c in enumerate(trace)))
    return 0


def cmd_enrol(a) -> int:
    cfg = _enrol_config(a)
    ubm = load_model(a.ubm)
    data = read_archive(a.enrol)
    if data.dim != ubm.params.input_dim:
        raise ValueError(f"enrolment archive has dimension {data.dim}, UBM expects {ubm.params.input_dim}")
    digest = model_digest(ubm)
    os.makedirs(a.out, exist_ok=True)
    for s in sorted(set(data.speaker.tolist())):
        mid = model_id(s)
        spk = enrol(ubm, data.frames[data.speaker == s], cfg.method, cfg.alpha, cfg.normalize_stats,
                    cfg.iterations, cfg.rate, mid)
        save_model(os.path.join(a.out, mid + MODEL_SUFFIX), replace(spk, ubm_digest=digest))
    return 0


def _load_speakers(directory, ids, digest):
    models = {}
    for mid in ids:
        path = os.path.join(directory, mid + MODEL_SUFFIX)
        if not os.path.exists(path):
            continue  # reported per trial
        spk = load_model(path)
        if spk.ubm_digest and spk.ubm_digest != digest:
            raise ValueError(f"{path} was enrolled against a different UBM")
        models[mid] = spk
    return models


def cmd_score(a) -> int:
    config = _scoring_config(a)
    ubm = load_model(a.ubm)
    test = read_archive(a.test)
    if test.dim != ubm.params.input_dim:
        raise ValueError(f"test archive has dimension {test.dim}, UBM expects {ubm.params.input_dim}")
    utts = {utt: x for utt, _, x in utterances(test)}
    listed = read_trial_list(a.trials)
    models = _load_speakers(a.models, sorted({m for m, _, _ in listed}), model_digest(ubm))
    trials = [Trial(m, u, utts.get(u), lab) for m, u, lab in listed]
    records = score_trialset(models, ubm, trials, config)
    for rec in records:
        if rec.error:
            log.warning("trial %s %s: %s", rec.model_id, rec.utt_id, rec.error)
    buf = io.StringIO()
    n = write_score_table(records, buf)
    if a.out:
        atomic_write(a.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    log.info("scored %d of %d trials", n, len(records))
    return 0


def _read_scores(path):
    with open(path, encoding="utf-8") as fh:
        records = read_score_table(fh)
    tgt = np.array([r.score for r in records if r.label == "tgt"])
    non = np.array([r.score for r in records if r.label == "non"])
    if tgt.size == 0 or non.size == 0:
        raise ValueError(f"{path}: need both tgt and non labeled scores ({tgt.size} tgt, {non.size} non)")
    return tgt, non


def cmd_eval(a) -> int:
    tgt, non = _read_scores(a.scores)
    print(summarize(tgt, non).line())
    if a.det:
        atomic_write(a.det, "".join(f"{fa!r}\t{miss!r}\n" for fa, miss in det_points(tgt, non)))
    return 0


def cmd_bench(a) -> int:
    synth = bench_synth_config(a.seed)
    train_cfg = bench_train_config(a.seed)
    if a.epochs is not None:
        if a.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        train_cfg = replace(train_cfg, epochs=a.epochs)
    if any(r1 < 0 or r2 < 0 or r1 + r2 == 0 for r1, r2 in a.grid):
        raise UsageError("grid points need r1, r2 >= 0 and not both zero")
    rows = run_bench(synth, train_cfg, a.grid, _enrol_config(a), _scoring_config(a))
    report = format_rows(rows)
    if a.out:
        atomic_write(a.out, report)
    sys.stdout.write(report)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="tf2dnn", description=__doc__, epilog=_defaults_table(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_defaults_table(), formatter_class=fmt)
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
        p.set_defaults(func=func, parser=p)
        return p

    p = add("synth", cmd_synth, "generate train/enrol/test archives and a trial list")
    p.add_argument("--out", required=True, help="output directory")
    _add_synth_flags(p)

    p = add("train-ubm", cmd_train_ubm, "train the autoencoder and build the UBM regression head")
    p.add_argument("--train", required=True, help="training archive")
    p.add_argument("--out", required=True, help="UBM model file")
    p.add_argument("--loss-trace", help="write epoch<TAB>loss lines here")
    p.add_argument("--lam0", type=float, default=EnrolConfig.lam0, help="prior precision of the head weights")
    p.add_argument("--stats-factors", choices=STATS_FACTORS, default=EnrolConfig.stats_factors,
                   help="factors fed to the network when accumulating UBM stats")
    _add_train_flags(p, TrainConfig())

    p = add("enrol", cmd_enrol, "build one speaker model per speaker in an archive")
    p.add_argument("--ubm", required=True)
    p.add_argument("--enrol", required=True, help="enrolment archive")
    p.add_argument("--out", required=True, help="directory for speaker models")
    _add_enrol_flags(p)

    p = add("score", cmd_score, "score a trial list")
    p.add_argument("--ubm", required=True)
    p.add_argument("--models", required=True, help="directory of speaker models")
    p.add_argument("--test", required=True, help="test archive")
    p.add_argument("--trials", required=True, help="model<TAB>utterance<TAB>label lines")
    p.add_argument("--out", help="score table (default: stdout)")
    _add_scoring_flags(p)

    p = add("eval", cmd_eval, "EER and minimum DCF of a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--det", help="write P_fa<TAB>P_miss operating points here")

    p = add("bench", cmd_bench, "paired DNN vs TF2-DNN comparison on synthetic data")
    p.add_argument("--grid", type=_grid, default=BENCH_GRID, help="r1:r2 points, e.g. 5:10,10:20")
    p.add_argument("--epochs", type=int, default=None, help="override the bench epoch count")
    p.add_argument("--out", help="also write the report here")
    _add_enrol_flags(p)
    _add_scoring_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if a.threads is not None and a.threads < 1:
        parser.error("--threads must be >= 1")
    limits = threadpool_limits(limits=a.threads) if a.threads else contextlib.nullcontext()
    try:
        with limits:
            return a.func(a)
    except UsageError as exc:
        a.parser.error(str(exc))
    except (OSError, ArchiveError, ModelFormatError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"tf2dnn {a.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
