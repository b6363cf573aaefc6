import numpy as np
import pytest

from digitvec.errors import (
    EmptyInput,
    IncompatibleTrial,
    TrialMismatch,
    ZeroVector,
)
from digitvec.scoring import (
    average_enrollment,
    build_cohorts,
    cosine_score,
    fuse_scores,
    score_trial,
    snorm,
    EnrollModel,
    TrialScore,
)


class TestCosine:
    def test_parallel_orthogonal_opposite(self):
        assert cosine_score([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
        assert cosine_score([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)
        assert cosine_score([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(-1.0)

    def test_scale_invariant(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert cosine_score(a, b) == pytest.approx(cosine_score(3.0 * a, 0.2 * b))

    def test_known_angle(self):
        assert cosine_score([1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            np.sqrt(0.5), abs=1e-12
        )

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class TestEnrollment:
    def test_mean_per_digit(self, rng):
        vecs = {0: rng.standard_normal((3, 4)), 5: rng.standard_normal((2, 4))}
        model = average_enrollment(vecs, "spk1")
        np.testing.assert_allclose(model.digit_means[0], vecs[0].mean(axis=0))
        np.testing.assert_allclose(model.digit_means[5], vecs[5].mean(axis=0))
        assert model.missing_digits() == [1, 2, 3, 4, 6, 7, 8, 9]

    def test_three_occurrences_of_all_ten(self, rng):
        vecs = {d: rng.standard_normal((3, 4)) for d in range(10)}
        model = average_enrollment(vecs, "spk2")
        assert model.missing_digits() == []
        assert len(model.digit_means) == 10

    def test_single_vector_identity(self, rng):
        v = rng.standard_normal(4)
        model = average_enrollment({7: [v]}, "spk3")
        np.testing.assert_allclose(model.digit_means[7], v)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            average_enrollment({}, "spk4")


class TestScoreTrial:
    def _model(self):
        return EnrollModel("m", {
            0: np.array([1.0, 0.0]),
            1: np.array([0.0, 1.0]),
        })

    def test_average_over_occurrences(self):
        tests = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
        score = score_trial(self._model(), tests, "010")
        expected = (1.0 + 1.0 + np.sqrt(0.5)) / 3.0
        assert score == pytest.approx(expected, abs=1e-12)

    def test_missing_digits_skipped_and_renormalized(self):
        tests = [np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        score = score_trial(self._model(), tests, "092")
        # digits 9 and 2 absent from the model: only the first term counts
        assert score == pytest.approx(1.0, abs=1e-12)

    def test_repeated_digit_counts_each_occurrence(self):
        tests = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        score = score_trial(self._model(), tests, "00")
        assert score == pytest.approx(0.5, abs=1e-12)

    def test_all_missing_incompatible(self):
        with pytest.raises(IncompatibleTrial):
            score_trial(self._model(), [np.array([1.0, 0.0])], "7")

    def test_length_mismatch(self):
        with pytest.raises(TrialMismatch):
            score_trial(self._model(), [np.array([1.0, 0.0])], "01")


class TestSnorm:
    def test_worked_example(self):
        # raw 3, enroll cohort (1, 1), test cohort (1, 2): 0.5*(2 + 1) = 1.5
        assert snorm(3.0, (1.0, 1.0, 10), (1.0, 2.0, 10)) == pytest.approx(1.5)

    def test_symmetric_in_sides(self):
        a = snorm(0.7, (0.1, 0.5, 5), (0.3, 0.9, 5))
        b = snorm(0.7, (0.3, 0.9, 5), (0.1, 0.5, 5))
        assert a == pytest.approx(b, abs=1e-15)

    def test_raw_at_both_means_is_zero(self):
        assert snorm(0.4, (0.4, 1.0, 5), (0.4, 2.0, 5)) == pytest.approx(0.0)

    def test_sigma_floor(self):
        out = snorm(1.0, (0.0, 0.0, 5), (0.0, 1.0, 5))
        assert np.isfinite(out)
        assert out == pytest.approx(0.5 * (1.0 / 1e-6 + 1.0))


def _utt(test_id, digit_string, model, gender=""):
    vectors = [model.digit_means[int(ch)] for ch in digit_string]
    return (test_id, digit_string, vectors, gender)


class TestCohorts:
    def _models(self, rng, n, prefix, gender=""):
        out = []
        for i in range(n):
            means = {d: rng.standard_normal(4) for d in range(10)}
            out.append(EnrollModel(f"{prefix}{i}", means, gender))
        return out

    def test_stats_match_manual_scores(self, rng):
        cohort_models = self._models(rng, 12, "c")
        cohort_tests = [_utt(f"ct{i}", "01234", m) for i, m in enumerate(cohort_models)]
        enroll = self._models(rng, 2, "e")
        tests = [_utt("t0", "567", cohort_models[0])]
        e_side, t_side = build_cohorts(cohort_models, cohort_tests, enroll, tests)

        scores = [score_trial(enroll[0], v, ds) for _, ds, v, _ in cohort_tests]
        mu, sigma, size = e_side.lookup("e0")
        assert mu == pytest.approx(np.mean(scores), abs=1e-12)
        assert sigma == pytest.approx(np.std(scores), abs=1e-12)
        assert size == len(cohort_tests)

        t_scores = [score_trial(m, tests[0][2], "567") for m in cohort_models]
        mu_t, sigma_t, size_t = t_side.lookup("t0")
        assert mu_t == pytest.approx(np.mean(t_scores), abs=1e-12)
        assert size_t == len(cohort_models)

    def test_gender_partition(self, rng):
        male = self._models(rng, 6, "cm", "m")
        female = self._models(rng, 6, "cf", "f")
        cohort_models = male + female
        cohort_tests = [
            _utt(f"ct{i}", "012", m, m.gender) for i, m in enumerate(cohort_models)
        ]
        enroll = self._models(rng, 1, "e", "m")
        e_side, _ = build_cohorts(cohort_models, cohort_tests, enroll, [])
        _, _, size = e_side.lookup("e0")
        assert size == 6  # only the male cohort tests

        e_side_all, _ = build_cohorts(
            cohort_models, cohort_tests, enroll, [], by_gender=False
        )
        assert e_side_all.lookup("e0")[2] == 12

    def test_identical_cohort_scores_floored(self, rng):
        model = self._models(rng, 1, "c")[0]
        cohort_tests = [_utt(f"ct{i}", "0", model) for i in range(12)]
        enroll = self._models(rng, 1, "e")
        e_side, _ = build_cohorts([model] * 12, cohort_tests, enroll, [])
        _, sigma, _ = e_side.lookup("e0")
        assert sigma >= 1e-6


class TestFusion:
    def _scores(self, values, label="target"):
        return [
            TrialScore(f"e{i}", f"t{i}", "01234", v, v, label)
            for i, v in enumerate(values)
        ]

    def test_equal_weight_mean(self):
        fused = fuse_scores([self._scores([1.0, 3.0]), self._scores([3.0, 5.0])])
        assert [s.normalized for s in fused] == [2.0, 4.0]

    def test_explicit_weights_normalized(self):
        fused = fuse_scores(
            [self._scores([1.0]), self._scores([5.0])], weights=[3.0, 1.0]
        )
        assert fused[0].normalized == pytest.approx(2.0)

    def test_single_system_identity(self):
        base = self._scores([0.2, 0.4])
        fused = fuse_scores([base])
        assert [s.normalized for s in fused] == [0.2, 0.4]

    def test_misaligned_trials(self):
        a = self._scores([1.0, 2.0])
        b = list(reversed(self._scores([1.0, 2.0])))
        with pytest.raises(TrialMismatch):
            fuse_scores([a, b])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            fuse_scores([])
