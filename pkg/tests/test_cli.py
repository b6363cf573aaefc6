import hashlib

import numpy as np
import pytest

from digitvec.cli import main, read_score_file
from digitvec.corpus import read_container


def run(argv):
    return main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


SMALL_CONFIG = """
[corpus]
n_speakers = 9
utts_per_speaker = 4
test_utts_per_speaker = 2
feature_dim = 6
states_per_digit = 2
frames_per_state_mean = 4.0
speaker_offset_scale = 1.0
noise_scale = 0.2

[hmm]
states = 2
comps = 1
iters = 2

[ivector]
rank = 4
iters = 3

[compensation]
method = uncertainty_norm

[scoring]
snorm = true
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One trained workspace shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("work")
    cfg = root / "config.ini"
    cfg.write_text(SMALL_CONFIG)
    assert run(["synth", "--config", cfg, "--seed", 3, "--out", root / "data"]) == 0
    assert run(["train", "--config", cfg, "--seed", 3,
                "--data", root / "data", "--out", root / "models.dvc"]) == 0
    return root


class TestSynth:
    def test_outputs_exist(self, workspace):
        data = workspace / "data"
        assert (data / "manifest.txt").exists()
        assert (data / "features.dvc").exists()
        assert (data / "trials.txt").exists()

    def test_deterministic_across_runs(self, tmp_path, workspace):
        cfg = workspace / "config.ini"
        assert run(["synth", "--config", cfg, "--seed", 3, "--out", tmp_path / "d2"]) == 0
        for name in ("manifest.txt", "features.dvc", "trials.txt"):
            assert sha(tmp_path / "d2" / name) == sha(workspace / "data" / name)

    def test_seed_changes_features(self, tmp_path, workspace):
        cfg = workspace / "config.ini"
        assert run(["synth", "--config", cfg, "--seed", 4, "--out", tmp_path / "d3"]) == 0
        assert sha(tmp_path / "d3" / "features.dvc") != sha(workspace / "data" / "features.dvc")

    def test_env_seed_fallback(self, tmp_path, workspace, monkeypatch):
        cfg = workspace / "config.ini"
        monkeypatch.setenv("DIGITVEC_SEED", "3")
        assert run(["synth", "--config", cfg, "--out", tmp_path / "d4"]) == 0
        assert sha(tmp_path / "d4" / "features.dvc") == sha(workspace / "data" / "features.dvc")


class TestConfig:
    def test_unknown_key_exit_2_names_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[hmm]\nstates = 2\nbananas = 7\n")
        assert run(["synth", "--config", cfg, "--out", tmp_path / "d"]) == 2
        assert "hmm.bananas" in capsys.readouterr().err

    def test_unknown_section_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[plumbing]\nx = 1\n")
        assert run(["synth", "--config", cfg, "--out", tmp_path / "d"]) == 2
        assert "plumbing" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert run(["synth", "--config", tmp_path / "nope.ini",
                    "--out", tmp_path / "d"]) == 2


class TestTrain:
    def test_bundle_inspectable(self, workspace, capsys):
        assert run(["inspect-bundle", "--bundle", workspace / "models.dvc"]) == 0
        out = capsys.readouterr().out
        assert "kind: bundle" in out
        assert "digit 0:" in out
        assert "chain [uncertainty_norm, length_norm, regularized_lda]" in out

    def test_missing_manifest_exit_2(self, tmp_path, capsys):
        assert run(["train", "--data", tmp_path, "--out", tmp_path / "m.dvc"]) == 2
        assert "manifest" in capsys.readouterr().err

    def test_states_flag_overrides(self, workspace, tmp_path):
        cfg = workspace / "config.ini"
        out = tmp_path / "m3.dvc"
        assert run(["train", "--config", cfg, "--seed", 3, "--states", 3,
                    "--data", workspace / "data", "--out", out]) == 0
        _, arrays = read_container(out)
        assert arrays["hmm/0/weights"].shape[0] == 3

    def test_bad_method_exit_2(self, workspace, tmp_path, capsys):
        assert run(["train", "--config", workspace / "config.ini",
                    "--method", "quantum", "--data", workspace / "data",
                    "--out", tmp_path / "m.dvc"]) == 2
        assert "quantum" in capsys.readouterr().err


class TestScore:
    def _score(self, workspace, out, extra=(), trials=None):
        return run(["score", "--bundle", workspace / "models.dvc",
                    "--data", workspace / "data",
                    "--trials", trials or workspace / "data" / "trials.txt",
                    "--out", out, *extra])

    def test_score_file_shape(self, workspace, tmp_path):
        out = tmp_path / "scores.txt"
        assert self._score(workspace, out) == 0
        scores, labels = read_score_file(out)
        n_lines = len(out.read_text().splitlines())
        n_trials = len((workspace / "data" / "trials.txt").read_text().splitlines())
        assert n_lines == n_trials == len(scores)
        assert set(labels) == {"target", "nontarget"}
        assert all(np.isfinite(scores))

    def test_bit_identical_across_runs(self, workspace, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert self._score(workspace, a) == 0
        assert self._score(workspace, b) == 0
        assert sha(a) == sha(b)

    def test_bit_identical_jobs_1_vs_8(self, workspace, tmp_path):
        a, b = tmp_path / "j1.txt", tmp_path / "j8.txt"
        assert self._score(workspace, a, ("--jobs", 1)) == 0
        assert self._score(workspace, b, ("--jobs", 8)) == 0
        assert sha(a) == sha(b)

    def test_no_snorm_raw_equals_normalized(self, workspace, tmp_path):
        out = tmp_path / "raw.txt"
        assert self._score(workspace, out, ("--no-snorm",)) == 0
        for line in out.read_text().splitlines():
            parts = line.split("\t")
            assert parts[4] == parts[5]

    def test_unknown_model_rejected_not_fatal(self, workspace, tmp_path, capsys):
        trials = tmp_path / "trials.txt"
        base = (workspace / "data" / "trials.txt").read_text().splitlines()
        trials.write_text(base[0] + "\nghost " + base[0].split()[1] + " 01234\n")
        out = tmp_path / "scores.txt"
        assert self._score(workspace, out, trials=trials) == 0
        err = capsys.readouterr().err
        assert "rejected" in err
        assert (tmp_path / "scores.txt.rejects").read_text().startswith("ghost ")
        scores, _ = read_score_file(out)
        assert len(scores) == 1


class TestEval:
    def test_report_on_real_scores(self, workspace, tmp_path, capsys):
        out = tmp_path / "scores.txt"
        run(["score", "--bundle", workspace / "models.dvc",
             "--data", workspace / "data",
             "--trials", workspace / "data" / "trials.txt", "--out", out])
        capsys.readouterr()
        report = tmp_path / "report.txt"
        det = tmp_path / "det.csv"
        assert run(["eval", "--scores", out, "--out", report, "--det-csv", det]) == 0
        text = capsys.readouterr().out
        assert "eer" in text and "ndcf_old_min" in text and "ndcf_new_min" in text
        assert report.read_text() == text
        assert det.read_text().startswith("threshold,far,frr")

    def test_separable_scores_give_zero(self, tmp_path, capsys):
        path = tmp_path / "scores.txt"
        lines = []
        for i, (lab, sc) in enumerate(
            [("target", 5.0), ("target", 4.0), ("nontarget", 1.0), ("nontarget", 0.5)]
        ):
            lines.append(f"e{i}\tt{i}\t01234\t{lab}\t{sc!r}\t{sc!r}")
        path.write_text("\n".join(lines) + "\n")
        assert run(["eval", "--scores", path]) == 0
        text = capsys.readouterr().out
        assert "eer             0.000000" in text
        assert "ndcf_old_min    0.000000" in text
        assert "ndcf_new_min    0.000000" in text

    def test_unlabeled_exit_2(self, tmp_path, capsys):
        path = tmp_path / "scores.txt"
        path.write_text("e0\tt0\t012\t-\t0.5\t0.5\n")
        assert run(["eval", "--scores", path]) == 2
        assert "unlabeled" in capsys.readouterr().err
