"""End-to-end acceptance checks.

Each test is one criterion; the pytest -v line per test is the pass/fail
record. Numeric tolerances and runtime budgets are asserted inside.
"""

import hashlib
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from digitvec.cli import main as cli_main
from digitvec.compensation import fit_uncertain_wccn, fit_uncertainty_norm, ScatterSet
from digitvec.corpus import SynthConfig, generate_synthetic_corpus, make_trial_list
from digitvec.hmm import FlatGmm, init_digit_hmms, viterbi_train
from digitvec.ivector import (
    aggregated_posterior_covariance,
    extract_posterior,
    init_extractor,
    minimum_divergence,
    train_extractor,
)
from digitvec.metrics import compute_det, compute_eer, compute_min_dcf, DCF_NEW, DCF_OLD
from digitvec.pipeline import PipelineConfig, train_models, enroll_speakers, score_trials
from digitvec.stats import BaumWelchStats


def tiny_flat(rng, n_comps=2, dim=3):
    return FlatGmm(
        0,
        np.full(n_comps, 1.0 / n_comps),
        rng.standard_normal((n_comps, dim)),
        0.5 + rng.random((n_comps, dim)),
    )


def random_stats(rng, flat):
    n = rng.uniform(0.0, 6.0, flat.num_components)
    f = rng.standard_normal(flat.means.shape) * np.sqrt(np.maximum(n, 1e-3))[:, None]
    return BaumWelchStats(0, n, f)


def run_pipeline_eer(synth_cfg, pipe_cfg, use_snorm):
    manifest, features, _ = generate_synthetic_corpus(synth_cfg)
    bundle = train_models(manifest, features, pipe_cfg)
    models = enroll_speakers(manifest, features, bundle)
    trials = make_trial_list(manifest)
    scores, rejects = score_trials(trials, models, features, bundle, use_snorm=use_snorm)
    assert not rejects
    curve = compute_det(
        [s.normalized for s in scores], [s.label == "target" for s in scores]
    )
    return compute_eer(curve)


def test_criterion_01_posterior_matches_dense_oracle():
    """100 random tiny models: posterior equals a dense joint-Gaussian solve."""
    rng = np.random.default_rng(101)
    start = time.monotonic()
    for _ in range(100):
        flat = tiny_flat(rng, n_comps=2, dim=3)
        ext = init_extractor(flat, 2, seed=0)
        ext.T = rng.standard_normal(ext.T.shape)
        stats = random_stats(rng, flat)
        post = extract_posterior(stats, ext)

        n_rep = np.repeat(stats.n, ext.dim)
        A = n_rep[:, None] * ext.T
        cov_ff = A @ A.T + np.diag(n_rep * ext.sigma)
        mean_ref = A.T @ np.linalg.solve(cov_ff, stats.f.reshape(-1))
        cov_ref = np.eye(2) - A.T @ np.linalg.solve(cov_ff, A)
        assert np.abs(post.mean - mean_ref).max() < 1e-8
        assert np.abs(post.covariance - cov_ref).max() < 1e-8
    assert time.monotonic() - start < 5.0


def test_criterion_02_em_monotonicity():
    """HMM loglik and extractor evidence non-decreasing over 5 seeds."""
    start = time.monotonic()
    for seed in range(5):
        rng = np.random.default_rng(200 + seed)
        cfg = SynthConfig(
            n_speakers=6, utts_per_speaker=3, test_utts_per_speaker=0,
            feature_dim=4, states_per_digit=2, frames_per_state_mean=5.0,
            seed=seed,
        )
        _, features, _ = generate_synthetic_corpus(cfg)
        corpus = list(features.values())
        hmms = init_digit_hmms(corpus, n_states=2, n_comps=2, seed=seed)
        _, logliks = viterbi_train(corpus, hmms, n_iters=4)
        diffs = np.diff(logliks)
        assert np.all(diffs >= -1e-6 * np.maximum(1.0, np.abs(logliks[:-1])))

        flat = tiny_flat(rng, n_comps=2, dim=3)
        T_true = rng.standard_normal((6, 2))
        stats_list = []
        for _ in range(50):
            y = rng.standard_normal(2)
            n = rng.uniform(1.0, 6.0, 2)
            n_rep = np.repeat(n, 3)
            sig = flat.variances.reshape(-1)
            f = n_rep * (T_true @ y) + np.sqrt(n_rep * sig) * rng.standard_normal(6)
            stats_list.append(BaumWelchStats(0, n, f.reshape(2, 3)))
        _, evidences = train_extractor(stats_list, flat, 2, n_iters=6, seed=seed)
        ediffs = np.diff(evidences)
        assert np.all(ediffs >= -(1e-6 + 1e-9 * np.abs(evidences[:-1])))
    assert time.monotonic() - start < 60.0


def test_criterion_03_minimum_divergence_unit_covariance():
    """After each MD step the aggregated posterior covariance is identity."""
    rng = np.random.default_rng(3)
    flat = tiny_flat(rng, n_comps=3, dim=2)
    ext = init_extractor(flat, 3, seed=3)
    ext.T = rng.standard_normal(ext.T.shape)
    stats_list = [random_stats(rng, flat) for _ in range(40)]
    for _ in range(3):
        posts = [extract_posterior(st, ext) for st in stats_list]
        ext, posts = minimum_divergence(ext, posts)
        agg = aggregated_posterior_covariance(posts)
        assert np.linalg.norm(agg - np.eye(3)) < 1e-6


def test_criterion_04_whitening_identities():
    """Uncertain WCCN and uncertainty norm whiten their targets exactly."""
    rng = np.random.default_rng(4)
    for _ in range(50):
        dim = int(rng.integers(2, 7))
        A = rng.standard_normal((dim, dim))
        B = rng.standard_normal((dim, dim))
        s_w = A @ A.T + 0.1 * np.eye(dim)
        s_u = B @ B.T + 0.1 * np.eye(dim)
        scatter = ScatterSet(0, np.eye(dim), s_w, None, s_u=s_u)
        W = fit_uncertain_wccn(scatter).matrix
        assert np.abs(W.T @ (s_w + s_u) @ W - np.eye(dim)).max() < 1e-8
        W = fit_uncertainty_norm(s_u).matrix
        assert np.abs(W.T @ s_u @ W - np.eye(dim)).max() < 1e-8


def test_criterion_05_metrics_oracle():
    """EER and minDCF equal a sweep oracle; worked example EER = 1/3."""
    curve = compute_det(
        [0.9, 0.8, 0.7, 0.75, 0.6, 0.2],
        [True, True, True, False, False, False],
    )
    assert compute_eer(curve) == pytest.approx(1.0 / 3.0, abs=1e-12)

    rng = np.random.default_rng(5)
    for _ in range(100):
        n = 50
        labels = rng.random(n) < 0.4
        labels[0], labels[1] = True, False
        scores = np.where(labels, 0.3, -0.3) + rng.standard_normal(n)
        curve = compute_det(scores, labels)
        tgt, non = scores[labels], scores[~labels]
        points = []
        for th in list(np.unique(scores)) + [np.inf]:
            points.append((np.mean(non >= th), np.mean(tgt < th)))
        for i, (far, frr) in enumerate(points):
            assert curve.far[i] == pytest.approx(far, abs=1e-12)
            assert curve.frr[i] == pytest.approx(frr, abs=1e-12)
        for params in (DCF_OLD, DCF_NEW):
            norm = min(params.c_miss * params.p_target,
                       params.c_fa * (1 - params.p_target))
            ref = min(
                params.c_miss * params.p_target * frr
                + params.c_fa * (1 - params.p_target) * far
                for far, frr in points
            ) / norm
            assert compute_min_dcf(curve, params) == pytest.approx(ref, abs=1e-12)


def test_criterion_06_subspace_recovery():
    """A known rank-2 subspace is recovered to < 0.05 rad."""
    rng = np.random.default_rng(6)
    n_comps, dim, rank = 3, 4, 2
    flat = FlatGmm(
        0,
        np.full(n_comps, 1 / n_comps),
        np.zeros((n_comps, dim)),
        np.ones((n_comps, dim)),
    )
    T_true = rng.standard_normal((n_comps * dim, rank))
    stats_list = []
    for _ in range(400):
        y = rng.standard_normal(rank)
        n = rng.uniform(2.0, 10.0, n_comps)
        n_rep = np.repeat(n, dim)
        f = n_rep * (T_true @ y) + np.sqrt(n_rep) * rng.standard_normal(n_comps * dim)
        stats_list.append(BaumWelchStats(0, n, f.reshape(n_comps, dim)))
    ext, _ = train_extractor(stats_list, flat, rank, n_iters=10, seed=1)
    assert subspace_angles(T_true, ext.T).max() < 0.05


SEPARABLE_CORPUS = dict(
    n_speakers=40, digits_per_utt=10, feature_dim=10, states_per_digit=4,
    speaker_offset_scale=1.0, noise_scale=0.2, channel_offset_scale=0.0,
    frames_per_state_mean=6.0, utts_per_speaker=6, enroll_utts=6,
    test_utts_per_speaker=6,
)


def test_criterion_07_end_to_end_separability():
    """40-speaker corpus with offset/noise ratio 5 scores at EER <= 2%."""
    start = time.monotonic()
    eer = run_pipeline_eer(
        SynthConfig(seed=0, **SEPARABLE_CORPUS),
        PipelineConfig(seed=0, hmm_states=4, hmm_comps=2, hmm_iters=3,
                       ivector_rank=8, ivector_iters=5),
        use_snorm=False,
    )
    elapsed = time.monotonic() - start
    assert eer <= 0.02
    assert elapsed < 300.0


def test_criterion_08_uncertainty_norm_beats_empty_chain():
    """Short-segment corpus: the compensation chain wins >= 8 of 10 seeds."""
    synth_kwargs = dict(
        n_speakers=90, utts_per_speaker=8, test_utts_per_speaker=10,
        feature_dim=8, states_per_digit=4, frames_per_state_mean=3.0,
        frames_per_state_jitter=1.0, speaker_offset_scale=0.5,
        channel_offset_scale=0.0, noise_scale=2.0,
    )
    wins = 0
    for seed in range(10):
        eers = {}
        for method in ("uncertainty_norm", "none"):
            eers[method] = run_pipeline_eer(
                SynthConfig(seed=seed, **synth_kwargs),
                PipelineConfig(seed=seed, hmm_states=4, hmm_comps=1, hmm_iters=2,
                               ivector_rank=8, ivector_iters=4, method=method),
                use_snorm=False,
            )
        wins += eers["uncertainty_norm"] < eers["none"]
    assert wins >= 8


def test_criterion_09_state_count_robustness():
    """EER varies by < 50% relative over state counts {4, 8, 16}."""
    eers = []
    for states in (4, 8, 16):
        eers.append(run_pipeline_eer(
            SynthConfig(seed=0, **SEPARABLE_CORPUS),
            PipelineConfig(seed=0, hmm_states=states, hmm_comps=2, hmm_iters=3,
                           ivector_rank=8, ivector_iters=5),
            use_snorm=False,
        ))
    spread = max(eers) - min(eers)
    assert spread <= 0.5 * max(max(eers), 1e-12)


def test_criterion_10_determinism(tmp_path):
    """Identical config and seed give bit-identical score files."""
    cfg = tmp_path / "config.ini"
    cfg.write_text(
        "[corpus]\nn_speakers = 9\nutts_per_speaker = 4\n"
        "test_utts_per_speaker = 2\nfeature_dim = 6\nstates_per_digit = 2\n"
        "frames_per_state_mean = 4.0\n"
        "[hmm]\nstates = 2\ncomps = 1\niters = 2\n"
        "[ivector]\nrank = 4\niters = 3\n"
    )
    data, bundle = tmp_path / "data", tmp_path / "models.dvc"
    assert cli_main(["synth", "--config", str(cfg), "--seed", "11",
                     "--out", str(data)]) == 0
    assert cli_main(["train", "--config", str(cfg), "--seed", "11",
                     "--data", str(data), "--out", str(bundle)]) == 0
    digests = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / f"scores_{name}.txt"
        assert cli_main(["score", "--bundle", str(bundle), "--data", str(data),
                         "--trials", str(data / "trials.txt"),
                         "--out", str(out), "--jobs", str(jobs)]) == 0
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    assert digests[0] == digests[1] == digests[2]
