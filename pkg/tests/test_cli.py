import subprocess
import sys

import numpy as np
import pytest

from helpers import brute_eer, brute_min_dcf
from tf2dnn.cli import main
from tf2dnn.storage import load_model, read_archive
from tf2dnn.trainer import TrainConfig, init

SYNTH = ["--speakers", "5", "--frames-per-session", "30", "--dim", "8"]
NET = ["--encoder", "12", "--bottleneck", "3", "--decoder", "12", "--r1", "2", "--r2", "3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small synthetic corpus, trained UBM and enrolled speakers."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "7", "--out", str(d / "data"), *SYNTH]) == 0
    assert main(["train-ubm", "--train", str(d / "data/train.tfda"), "--out", str(d / "ubm.tf2m"), "--epochs", "3",
                 "--loss-trace", str(d / "loss.tsv"), *NET]) == 0
    assert main(["enrol", "--ubm", str(d / "ubm.tf2m"), "--enrol", str(d / "data/enrol.tfda"),
                 "--out", str(d / "models")]) == 0
    return d


def score_args(d, models="models"):
    return ["score", "--ubm", str(d / "ubm.tf2m"), "--models", str(d / models), "--test", str(d / "data/test.tfda"),
            "--trials", str(d / "data/trials.tsv")]


def test_synth_is_byte_identical(tmp_path, workdir):
    assert main(["synth", "--seed", "7", "--out", str(tmp_path / "again"), *SYNTH]) == 0
    for name in ("train.tfda", "enrol.tfda", "test.tfda", "trials.tsv"):
        assert (tmp_path / "again" / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_synth_trial_counts(workdir):
    lines = (workdir / "data/trials.tsv").read_text().splitlines()
    labels = [line.split("\t")[2] for line in lines]
    # 5 speakers, 2 test utterances each
    assert labels.count("tgt") == 5 * 2
    assert labels.count("non") == 5 * 4 * 2


def test_synth_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main(["synth", "--seed", "7"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["synth", "--out", str(tmp_path / "x"), "--speakers", "0"])
    assert err.value.code == 2
    assert "n_speakers" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tf2dnn.cli", "synth"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "--out" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "tf2dnn.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "TrainConfig" in proc.stdout and "lr_theta" in proc.stdout


def test_loss_trace(workdir):
    rows = [line.split("\t") for line in (workdir / "loss.tsv").read_text().splitlines()]
    assert [r[0] for r in rows] == ["1", "2", "3"]
    assert all(np.isfinite(float(r[1])) for r in rows)


def test_train_no_op_limit(tmp_path, workdir):
    out = tmp_path / "noop.tf2m"
    assert main(["train-ubm", "--train", str(workdir / "data/train.tfda"), "--out", str(out), "--epochs", "1",
                 "--lr-theta", "1e-12", "--lr-session", "1e-12", "--lr-speaker", "1e-12", *NET]) == 0
    ubm = load_model(out)
    data = read_archive(workdir / "data/train.tfda")
    cfg = TrainConfig(epochs=1, encoder=(12,), bottleneck=3, decoder=(12,), r1=2, r2=3)
    p0, z0 = init(cfg, data.dim, data.n_sessions, data.n_speakers)
    for k, v in p0.arrays.items():
        np.testing.assert_allclose(ubm.params.arrays[k], v, rtol=0, atol=1e-6)
    np.testing.assert_allclose(ubm.factors.Z2, z0.Z2, rtol=0, atol=1e-6)


def test_train_is_reproducible_and_baseline_drops_factors(tmp_path, workdir):
    args = ["train-ubm", "--train", str(workdir / "data/train.tfda"), "--epochs", "3", *NET]
    assert main([*args, "--out", str(tmp_path / "again.tf2m")]) == 0
    assert (tmp_path / "again.tf2m").read_bytes() == (workdir / "ubm.tf2m").read_bytes()
    assert main([*args, "--out", str(tmp_path / "dnn.tf2m"), "--baseline-dnn"]) == 0
    dnn = load_model(tmp_path / "dnn.tf2m")
    assert (dnn.params.r1, dnn.params.r2) == (0, 0)
    assert not any(k.startswith("V") for k in dnn.params.arrays)


def test_train_missing_archive(tmp_path, capsys):
    assert main(["train-ubm", "--train", str(tmp_path / "none.tfda"), "--out", str(tmp_path / "u.tf2m")]) == 1
    assert "none.tfda" in capsys.readouterr().err
    assert not (tmp_path / "u.tf2m").exists()


def test_alpha_one_scores_are_zero(tmp_path, workdir):
    assert main(["enrol", "--ubm", str(workdir / "ubm.tf2m"), "--enrol", str(workdir / "data/enrol.tfda"),
                 "--out", str(workdir / "alpha1"), "--alpha", "1"]) == 0
    out = tmp_path / "s.tsv"
    assert main([*score_args(workdir, "alpha1"), "--out", str(out)]) == 0
    scores = [line.split("\t")[2] for line in out.read_text().splitlines()]
    assert len(scores) == 50 and set(scores) == {"0"}


def test_mc_zero_matches_plain_scoring(tmp_path, workdir):
    assert main([*score_args(workdir), "--out", str(tmp_path / "a.tsv")]) == 0
    assert main([*score_args(workdir), "--out", str(tmp_path / "b.tsv"), "--mc-dropout", "0"]) == 0
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert main([*score_args(workdir), "--out", str(tmp_path / "c.tsv"), "--mc-dropout", "0.2",
                 "--mc-samples", "3"]) == 0
    assert (tmp_path / "c.tsv").read_bytes() != (tmp_path / "a.tsv").read_bytes()


def test_score_skips_missing_model(tmp_path, workdir, capsys):
    trials = tmp_path / "t.tsv"
    trials.write_text("spk0000\tutt00000\ttgt\nspk9999\tutt00000\tnon\nspk0001\tutt99999\tnon\n")
    args = score_args(workdir)
    args[args.index("--trials") + 1] = str(trials)
    assert main([*args, "--out", str(tmp_path / "s.tsv")]) == 0
    assert len((tmp_path / "s.tsv").read_text().splitlines()) == 1


def test_score_dimension_mismatch(tmp_path, workdir, capsys):
    assert main(["synth", "--out", str(tmp_path / "other"), "--speakers", "2", "--dim", "5",
                 "--frames-per-session", "10"]) == 0
    args = score_args(workdir)
    args[args.index("--test") + 1] = str(tmp_path / "other/test.tfda")
    assert main(args) == 1
    assert "dimension" in capsys.readouterr().err


def test_score_rejects_bad_flags(workdir):
    with pytest.raises(SystemExit) as err:
        main([*score_args(workdir), "--mc-dropout", "1.0"])
    assert err.value.code == 2


def test_eval_hand_table(tmp_path, capsys):
    table = tmp_path / "scores.tsv"
    table.write_text("a\tu1\t2.0\ttgt\na\tu2\t0.5\tnon\nb\tu1\t1.0\tnon\nb\tu2\t0.25\ttgt\n")
    assert main(["eval", "--scores", str(table), "--det", str(tmp_path / "det.tsv")]) == 0
    line = capsys.readouterr().out.strip()
    tgt, non = [2.0, 0.25], [0.5, 1.0]
    expected = (f"EER% {100 * brute_eer(tgt, non):.4f}  minDCF08 {brute_min_dcf(tgt, non, 10, 1, 0.01):.4f}  "
                f"minDCF10 {brute_min_dcf(tgt, non, 1, 1, 0.001):.4f}")
    assert line == expected
    det = [tuple(map(float, r.split("\t"))) for r in (tmp_path / "det.tsv").read_text().splitlines()]
    assert det[0] == (1.0, 0.0) and det[-1] == (0.0, 1.0)


def test_eval_needs_both_labels(tmp_path, capsys):
    table = tmp_path / "scores.tsv"
    table.write_text("a\tu1\t2.0\ttgt\n")
    assert main(["eval", "--scores", str(table)]) == 1
    assert "non" in capsys.readouterr().err


def test_bench_single_grid_point(tmp_path, capsys):
    out = tmp_path / "report.tsv"
    assert main(["bench", "--grid", "2:3", "--epochs", "1", "--threads", "1", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].startswith("DNN\t-\t-\t") and rows[2].startswith("TF2-DNN\t2\t3\t")
    assert capsys.readouterr().out == out.read_text()


def test_bench_bad_grid():
    with pytest.raises(SystemExit) as err:
        main(["bench", "--grid", "5-10"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["bench", "--grid", "0:0"])
    assert err.value.code == 2
