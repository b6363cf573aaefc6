"""Enrollment averaging, digit-averaged cosine scoring, S-Norm and fusion.

A speaker model stores, per digit, the mean of the transformed enrollment
vectors of that digit. A trial scores each digit occurrence of the test
utterance against the model's matching entry by cosine similarity and
averages over occurrences; missing digits are skipped with
renormalization. S-Norm is the symmetric two-sided z-norm average using
cohort score means and standard deviations from both trial sides.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import EmptyInput, IncompatibleTrial, TrialMismatch, ZeroVector

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


@dataclass
class EnrollModel:
    """Per-digit averaged enrollment vectors of one speaker model."""

    model_id: str
    digit_means: dict  # digit -> vector
    gender: str = ""

    def missing_digits(self):
        return sorted(set(range(10)) - set(self.digit_means))


@dataclass
class CohortStats:
    """Cohort score mean/std per enroll model or test utterance."""

    by_key: dict = field(default_factory=dict)  # key -> (mu, sigma, size)

    def lookup(self, key):
        return self.by_key.get(key)


@dataclass
class TrialScore:
    enroll_id: str
    test_id: str
    digit_string: str
    raw: float
    normalized: float
    label: str = ""


def cosine_score(a, b):
    """Cosine similarity of two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for the zero vector")
    return float(a @ b / (na * nb))


def average_enrollment(vectors_by_digit, model_id, gender=""):
    """Average the transformed enrollment vectors per digit."""
    if not vectors_by_digit:
        raise EmptyInput("no enrollment vectors")
    means = {}
    for digit, vecs in vectors_by_digit.items():
        vecs = np.atleast_2d(np.asarray(vecs, dtype=np.float64))
        means[int(digit)] = vecs.mean(axis=0)
    model = EnrollModel(model_id, means, gender)
    missing = model.missing_digits()
    if missing:
        log.warning("model %s missing digits %s", model_id, missing)
    return model


def score_trial(model, test_vectors, digit_string):
    """Mean per-occurrence cosine score of a test utterance.

    ``test_vectors`` holds one vector per digit occurrence, in the order
    of ``digit_string``. Digits absent from the model are skipped and the
    mean renormalized; if every digit is missing the trial is
    incompatible.
    """
    if len(test_vectors) != len(digit_string):
        raise TrialMismatch(
            f"{len(test_vectors)} test vectors for {len(digit_string)} digits"
        )
    scores = []
    for ch, vec in zip(digit_string, test_vectors):
        entry = model.digit_means.get(int(ch))
        if entry is None:
            continue
        scores.append(cosine_score(entry, vec))
    if not scores:
        raise IncompatibleTrial(
            f"model {model.model_id} shares no digit with string {digit_string}"
        )
    return float(np.mean(scores))


def snorm(raw, enroll_stats, test_stats):
    """Symmetric score normalization from both trial sides."""
    mu_e, sigma_e, _ = enroll_stats
    mu_t, sigma_t, _ = test_stats
    if sigma_e < SIGMA_FLOOR:
        log.warning("enroll cohort sigma %.3g floored", sigma_e)
        sigma_e = SIGMA_FLOOR
    if sigma_t < SIGMA_FLOOR:
        log.warning("test cohort sigma %.3g floored", sigma_t)
        sigma_t = SIGMA_FLOOR
    return 0.5 * ((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t)


def _summary(scores):
    scores = np.asarray(scores, dtype=np.float64)
    sigma = float(scores.std())
    return float(scores.mean()), max(sigma, SIGMA_FLOOR), scores.size


def build_cohorts(cohort_models, cohort_tests, enroll_models, test_utterances,
                  by_gender=True):
    """Cohort statistics for both trial sides.

    ``cohort_models``/``cohort_tests`` come from the background speakers:
    pseudo enroll models and per-utterance (test id, digit string,
    vectors, gender) tuples. Each real enroll model is scored against the
    cohort test side and each real test utterance against the cohort
    models, optionally restricted to matching gender.
    """
    if len(cohort_models) < 10:
        log.warning("cohort of only %d models", len(cohort_models))
    enroll_side = CohortStats()
    for model in enroll_models:
        scores = []
        for test_id, digit_string, vectors, gender in cohort_tests:
            if by_gender and model.gender and gender and model.gender != gender:
                continue
            try:
                scores.append(score_trial(model, vectors, digit_string))
            except IncompatibleTrial:
                continue
        if scores:
            enroll_side.by_key[model.model_id] = _summary(scores)

    test_side = CohortStats()
    for test_id, digit_string, vectors, gender in test_utterances:
        scores = []
        for model in cohort_models:
            if by_gender and model.gender and gender and model.gender != gender:
                continue
            try:
                scores.append(score_trial(model, vectors, digit_string))
            except IncompatibleTrial:
                continue
        if scores:
            test_side.by_key[test_id] = _summary(scores)
    return enroll_side, test_side


def fuse_scores(score_lists, weights=None):
    """Weighted mean of aligned normalized score lists."""
    if not score_lists:
        raise EmptyInput("nothing to fuse")
    n_systems = len(score_lists)
    if weights is None:
        weights = np.full(n_systems, 1.0 / n_systems)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
    first = score_lists[0]
    fused = []
    for i, trial in enumerate(first):
        parts = []
        for system in score_lists:
            other = system[i]
            if (other.enroll_id, other.test_id) != (trial.enroll_id, trial.test_id):
                raise TrialMismatch(
                    f"trial {i}: {other.enroll_id}/{other.test_id} vs "
                    f"{trial.enroll_id}/{trial.test_id}"
                )
            parts.append(other.normalized)
        value = float(np.dot(weights, parts))
        fused.append(TrialScore(
            trial.enroll_id, trial.test_id, trial.digit_string,
            value, value, trial.label,
        ))
    return fused
