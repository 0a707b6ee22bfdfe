import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from truncgrad.cli import main, read_manifest
from truncgrad.data import write_examples
from truncgrad.learner import read_model

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = FIXTURES / "small.svm"


def golden_accuracy():
    for line in (FIXTURES / "small.golden").read_text().splitlines():
        if line.startswith("accuracy="):
            return float(line.split("=", 1)[1])
    raise AssertionError("golden file has no accuracy")


@pytest.fixture
def small_run(tmp_path):
    model = tmp_path / "m.txt"
    rc = main(["train", "--eta", "0.01", "--g", "0.05", "--K", "3", str(SMALL), "-o", str(model), "--trace", str(tmp_path / "t.csv"), "--snapshots", str(tmp_path / "s.npy")])
    assert rc == 0
    return tmp_path


class TestTrain:
    ARGS = ["--rule", "tg", "--eta", "0.1", "--g", "0.01", "--K", "10", "--theta", "inf", "--loss", "square", "--passes", "3", "--seed", "7"]

    def test_writes_model_and_manifest(self, tmp_path):
        model = tmp_path / "model.txt"
        assert main(["train", *self.ARGS, str(SMALL), "-o", str(model)]) == 0
        cfg, weights = read_model(model)
        assert cfg.K == 10 and cfg.theta == float("inf") and weights
        man = read_manifest(tmp_path / "model.txt.manifest")
        assert man["config.passes"] == "3" and man["seed"] == "7"
        assert len(man["input_sha256"]) == 64
        assert man["steps"] == "240" and int(man["peak_nnz"]) >= int(man["nnz"])
        assert "wall_clock_seconds" not in man

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert main(["train", *self.ARGS, str(SMALL), "-o", str(tmp_path / f"{name}.txt"), "--trace", str(tmp_path / f"{name}.csv")]) == 0
        for suffix in (".txt", ".txt.manifest", ".csv"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_rounding_needs_finite_theta(self, tmp_path, capsys):
        assert main(["train", "--rule", "rounding", "--theta", "inf", str(SMALL), "-o", str(tmp_path / "m.txt")]) == 1
        assert "finite theta" in capsys.readouterr().err
        assert not (tmp_path / "m.txt").exists()

    def test_flags_checked_before_io(self, tmp_path):
        assert main(["train", "--eta", "7", str(tmp_path / "missing.svm")]) == 1

    def test_missing_input(self, tmp_path):
        assert main(["train", str(tmp_path / "missing.svm"), "-o", str(tmp_path / "m.txt")]) == 1

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.svm"
        bad.write_text("1 2:1 2:1\n")
        assert main(["train", str(bad), "-o", str(tmp_path / "m.txt")]) == 1

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--bogus", str(SMALL)])
        assert info.value.code == 1

    def test_divergence_exit_code(self, tmp_path):
        data = tmp_path / "huge.svm"
        data.write_text("1 1:1e155\n" * 5)
        assert main(["train", "--eta", "1", str(data), "-o", str(tmp_path / "m.txt")]) == 2

    def test_g_equals_theta(self, tmp_path):
        model = tmp_path / "m.txt"
        assert main(["train", "--g", "0.3", "--g-equals-theta", str(SMALL), "-o", str(model)]) == 0
        cfg, _ = read_model(model)
        assert cfg.theta == 0.3 and cfg.g == 0.3

    def test_record_time(self, tmp_path):
        assert main(["train", str(SMALL), "-o", str(tmp_path / "m.txt"), "--record-time"]) == 0
        assert "wall_clock_seconds" in read_manifest(tmp_path / "m.txt.manifest")


class TestPredict:
    def test_golden_accuracy(self, tmp_path):
        model = tmp_path / "m.txt"
        assert main(["train", "--eta", "0.05", "--g", "0.02", "--K", "2", "--theta", "0.5", "--passes", "3", str(SMALL), "-o", str(model)]) == 0
        assert main(["predict", str(SMALL), "-m", str(model), "-o", str(tmp_path / "p.txt"), "--metrics", str(tmp_path / "met.txt")]) == 0
        metrics = read_manifest(tmp_path / "met.txt")
        assert float(metrics["accuracy"]) == golden_accuracy()
        assert len((tmp_path / "p.txt").read_text().splitlines()) == 80

    def test_empty_model_scores_zero(self, tmp_path):
        model = tmp_path / "empty.txt"
        model.write_text("rule=truncated_gradient\neta=0.1\ng=0\ntheta=inf\nK=1\nloss=square\n")
        assert main(["predict", str(SMALL), "-m", str(model), "-o", str(tmp_path / "p.txt"), "--metrics", str(tmp_path / "met.txt")]) == 0
        assert set((tmp_path / "p.txt").read_text().split()) == {"0.0"}
        assert float(read_manifest(tmp_path / "met.txt")["auc"]) == 0.5

    def test_unlabeled_input_gives_scores_only(self, tmp_path, small_run):
        data = tmp_path / "u.svm"
        data.write_text("1:1 2:0.5\n3:1\n")
        assert main(["predict", str(data), "-m", str(small_run / "m.txt"), "-o", str(tmp_path / "p.txt"), "--metrics", str(tmp_path / "met.txt")]) == 0
        assert len((tmp_path / "p.txt").read_text().splitlines()) == 2
        assert not (tmp_path / "met.txt").exists()

    def test_index_overflow(self, tmp_path, small_run):
        data = tmp_path / "o.svm"
        data.write_text(f"1 {2**63}:1\n")
        assert main(["predict", str(data), "-m", str(small_run / "m.txt")]) == 1

    def test_unreadable_model(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense\n")
        assert main(["predict", str(SMALL), "-m", str(bad)]) == 1
        assert main(["predict", str(SMALL), "-m", str(tmp_path / "nope.txt")]) == 1


class TestVerify:
    def _verify(self, d, trace="t.csv", extra=()):
        return main(["verify-regret", "--data", str(SMALL), "--trace", str(d / trace), "--snapshots", str(d / "s.npy"), "--model", str(d / "m.txt"), "--scan-C", "-o", str(d / "r.csv"), *extra])

    def test_passing_run(self, small_run):
        assert self._verify(small_run) == 0
        rows = list(csv.DictReader(open(small_run / "r.csv")))
        assert {r["comparator"] for r in rows} == {"zero", "final", "oracle", "random"}
        assert {r["check"] for r in rows} == {"theorem1", "corollary1"}
        assert all(r["pass"] == "1" for r in rows)

    def test_zero_gravity_run(self, tmp_path):
        assert main(["train", "--eta", "0.01", str(SMALL), "-o", str(tmp_path / "m.txt"), "--trace", str(tmp_path / "t.csv"), "--snapshots", str(tmp_path / "s.npy")]) == 0
        assert self._verify(tmp_path) == 0

    def test_tampered_trace_fails(self, small_run):
        rows = list(csv.reader(open(small_run / "t.csv")))
        for r in rows[1:]:
            r[2] = repr(float(r[2]) * 3 + 1)
        with open(small_run / "bad.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        assert self._verify(small_run, "bad.csv") == 3
        assert any(r["pass"] == "0" for r in csv.DictReader(open(small_run / "r.csv")))

    def test_decaying_rate_refused(self, tmp_path, capsys):
        assert main(["train", "--eta", "0.01", "--lr-decay-power", "0.5", str(SMALL), "-o", str(tmp_path / "m.txt"), "--trace", str(tmp_path / "t.csv"), "--snapshots", str(tmp_path / "s.npy")]) == 0
        assert self._verify(tmp_path) == 1
        assert "constant" in capsys.readouterr().err

    def test_missing_bound(self, small_run):
        args = ["verify-regret", "--data", str(SMALL), "--trace", str(small_run / "t.csv"), "--snapshots", str(small_run / "s.npy"), "--model", str(small_run / "m.txt")]
        assert main(args) == 1

    def test_sampled_lemma_steps(self, small_run):
        assert self._verify(small_run, extra=["--lemma-steps", "10", "--comparators", "zero"]) == 0


class TestSweepAndCv:
    def test_sweep(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["sweep", str(SMALL), "--eta", "0.05", "--grid", "0.01,0.1,1", "-o", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 4 and "0.0" in {r["value"] for r in rows}
        assert [int(r["nnz"]) for r in rows] == sorted(int(r["nnz"]) for r in rows)

    def test_sweep_with_test_file_and_jobs(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["sweep", str(SMALL), "--test", str(SMALL), "--param", "theta", "--rule", "rounding", "--theta", "0.1", "--grid", "0.05,0.5", "--jobs", "2", "-o", str(out)]) == 0
        assert len(list(csv.DictReader(open(out)))) == 3

    def test_cv(self, tmp_path, capsys):
        out = tmp_path / "cv.csv"
        assert main(["cv", str(SMALL), "--folds", "4", "--etas", "0.05,0.1", "--gs", "0,0.01", "--passes-grid", "1,2", "--pass-lr-decays", "1,0.5", "-o", str(out)]) == 0
        assert "selected" in capsys.readouterr().out
        assert len(list(csv.DictReader(open(out)))) == 16

    def test_cv_bad_grid(self):
        assert main(["cv", str(SMALL), "--etas", "5"]) == 1
        with pytest.raises(SystemExit):
            main(["cv", str(SMALL), "--gs", "a,b"])


class TestGenSynthetic:
    def test_deterministic_with_truth(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-synthetic", "--n", "50", "--informative", "3", "--noise", "20", "--seed", "5", "-o", str(tmp_path / f"{name}.svm")]) == 0
        assert (tmp_path / "a.svm").read_bytes() == (tmp_path / "b.svm").read_bytes()
        _, truth = read_model(tmp_path / "a.svm.truth")
        assert sorted(truth) == [1, 2, 3]

    def test_bad_size(self, tmp_path):
        assert main(["gen-synthetic", "--n", "0", "-o", str(tmp_path / "a.svm")]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "truncgrad", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "truncgrad" in out.stdout


def test_gzip_input(tmp_path):
    from truncgrad.data import read_examples

    gz = tmp_path / "d.svm.gz"
    write_examples(gz, read_examples(SMALL))
    assert main(["train", str(gz), "-o", str(tmp_path / "m.txt")]) == 0
    assert main(["train", str(SMALL), "-o", str(tmp_path / "n.txt")]) == 0
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "n.txt").read_bytes()
