"""End-to-end glue: background training, vector extraction, enrollment
and trial scoring on top of the lower-level modules.

Training runs HMMs -> statistics -> subspaces -> compensation chains ->
cohorts on the background split and packs everything into a ModelBundle.
Scoring extracts per-occurrence vectors for enrollment and test
utterances, applies the per-digit chains, averages enrollment vectors and
scores trials with optional S-Norm.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np

from . import compensation, hmm as hmm_mod, ivector, scoring, stats as stats_mod
from .corpus import ModelBundle
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    hmm_states: int = 4
    hmm_comps: int = 2
    hmm_iters: int = 3
    ivector_rank: int = 8
    ivector_iters: int = 5
    seed: int = 0
    method: str = "uncertainty_norm"
    reg_coeff: float = 1.0
    lda_dim: int = 0  # 0 keeps full rank
    snorm: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.method not in compensation.CHAIN_METHODS:
            raise ConfigError(f"unknown compensation method {self.method!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


def _map(fn, items, jobs):
    """Order-preserving map, threaded when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def collect_stats(corpus, hmms, flats, jobs=1):
    """Per-occurrence Baum-Welch stats of every utterance, grouped by digit.

    Returns dict digit -> list of (speaker_id, utt_id, stats).
    """

    def one(item):
        speaker_id, feats = item
        ali = hmm_mod.viterbi_align(feats, feats.digit_string, hmms)
        return speaker_id, feats.utterance_id, stats_mod.stats_for_utterance(
            feats, ali, hmms, flats
        )

    grouped = {d: [] for d in hmms}
    for speaker_id, utt_id, stats_list in _map(one, corpus, jobs):
        for st in stats_list:
            grouped[st.digit].append((speaker_id, utt_id, st))
    return grouped


def train_models(manifest, features, cfg):
    """Train every per-digit model on the background split."""
    background = [
        (u.speaker_id, features[u.utt_id]) for u in manifest.split("background")
    ]
    if not background:
        raise ConfigError("manifest has no background utterances")
    corpus = [f for _, f in background]

    log.info("initializing HMMs (%d states, %d comps)", cfg.hmm_states, cfg.hmm_comps)
    hmms = hmm_mod.init_digit_hmms(corpus, cfg.hmm_states, cfg.hmm_comps, cfg.seed)
    hmms, hmm_logliks = hmm_mod.viterbi_train(corpus, hmms, cfg.hmm_iters)
    flats = {d: hmm_mod.flatten_hmm(h) for d, h in hmms.items()}

    grouped = collect_stats(background, hmms, flats, cfg.jobs)

    extractors, evidences = {}, {}
    for d in sorted(grouped):
        stats_list = [st for _, _, st in grouped[d]]
        extractors[d], evidences[d] = ivector.train_extractor(
            stats_list, flats[d], cfg.ivector_rank, cfg.ivector_iters, cfg.seed
        )

    chains = {}
    raw_by_digit = {}
    for d in sorted(grouped):
        posteriors = [
            (spk, ivector.extract_posterior(st, extractors[d]))
            for spk, _, st in grouped[d]
        ]
        raw_by_digit[d] = posteriors
        by_speaker = {}
        for spk, post in posteriors:
            by_speaker.setdefault(spk, []).append(post.mean)
        chains[d] = compensation.build_chain(
            cfg.method,
            {spk: np.array(v) for spk, v in by_speaker.items()},
            [post.covariance for _, post in posteriors],
            digit=d,
            reg_coeff=cfg.reg_coeff,
            lda_dim=cfg.lda_dim or None,
        )

    bundle = ModelBundle(
        seed=cfg.seed,
        hmms=hmms,
        flats=flats,
        extractors=extractors,
        chains=chains,
        training_log={
            "hmm_loglik": hmm_logliks,
            "evidence": {str(d): list(map(float, ev)) for d, ev in evidences.items()},
        },
    )
    _attach_cohorts(bundle, manifest, background, grouped, raw_by_digit)
    return bundle


def _attach_cohorts(bundle, manifest, background, grouped, raw_by_digit):
    """Pseudo enroll models and test utterances from the background split."""
    gender_of = {u.speaker_id: u.gender for u in manifest.utterances}
    transformed = {}  # (digit, utt_id) -> list of vectors in occurrence order
    per_speaker_digit = {}
    for d, posteriors in raw_by_digit.items():
        chain = bundle.chains[d]
        for (spk, post), (_, utt_id, _) in zip(posteriors, grouped[d]):
            vec = chain.apply(post.mean)
            transformed.setdefault(utt_id, {}).setdefault(d, []).append(vec)
            per_speaker_digit.setdefault(spk, {}).setdefault(d, []).append(vec)

    for spk in sorted(per_speaker_digit):
        means = {
            d: np.mean(vecs, axis=0) for d, vecs in per_speaker_digit[spk].items()
        }
        bundle.cohort_models.append(
            scoring.EnrollModel(spk, means, gender_of.get(spk, ""))
        )
    for u in manifest.split("background"):
        per_digit = transformed.get(u.utt_id, {})
        vectors, ok = [], True
        taken = {d: 0 for d in per_digit}
        for ch in u.digit_string:
            d = int(ch)
            occs = per_digit.get(d, [])
            if taken.get(d, 0) >= len(occs):
                ok = False
                break
            vectors.append(occs[taken[d]])
            taken[d] += 1
        if ok and vectors:
            bundle.cohort_tests.append(
                (u.utt_id, u.digit_string, vectors, u.gender)
            )


def extract_trial_vectors(feats, bundle):
    """Transformed vector per digit occurrence, in digit-string order."""
    ali = hmm_mod.viterbi_align(feats, feats.digit_string, bundle.hmms)
    stats_list = stats_mod.stats_for_utterance(feats, ali, bundle.hmms, bundle.flats)
    vectors = []
    for st in stats_list:
        post = ivector.extract_posterior(st, bundle.extractors[st.digit])
        vectors.append(bundle.chains[st.digit].apply(post.mean))
    return vectors


def enroll_speakers(manifest, features, bundle, jobs=1):
    """Build one enrollment model per evaluation speaker."""
    enroll_utts = [u for u in manifest.split("evaluation") if u.role == "enroll"]
    gender_of = {u.speaker_id: u.gender for u in manifest.utterances}
    vec_lists = _map(
        lambda u: extract_trial_vectors(features[u.utt_id], bundle), enroll_utts, jobs
    )
    by_speaker = {}
    for u, vectors in zip(enroll_utts, vec_lists):
        acc = by_speaker.setdefault(u.speaker_id, {})
        for ch, vec in zip(u.digit_string, vectors):
            acc.setdefault(int(ch), []).append(vec)
    return {
        spk: scoring.average_enrollment(acc, spk, gender_of.get(spk, ""))
        for spk, acc in sorted(by_speaker.items())
    }


def score_trials(trials, models, test_features, bundle, use_snorm=True, jobs=1,
                 gender_of=None, by_gender=False):
    """Score a trial list; returns (scores, rejects).

    Trials whose enroll model or test utterance is unknown are collected
    in ``rejects`` instead of raising. ``gender_of`` maps test utterance
    ids to gender tags when gender-dependent cohorts are wanted.
    """
    gender_of = gender_of or {}
    test_ids = sorted({t.test_id for t in trials if t.test_id in test_features})
    vec_lists = _map(
        lambda tid: extract_trial_vectors(test_features[tid], bundle), test_ids, jobs
    )
    test_vectors = dict(zip(test_ids, vec_lists))

    enroll_side = test_side = None
    if use_snorm:
        test_tuples = []
        for tid in test_ids:
            feats = test_features[tid]
            test_tuples.append(
                (tid, feats.digit_string, test_vectors[tid], gender_of.get(tid, ""))
            )
        enroll_side, test_side = scoring.build_cohorts(
            bundle.cohort_models,
            bundle.cohort_tests,
            list(models.values()),
            test_tuples,
            by_gender=by_gender,
        )

    results, rejects = [], []
    for t in trials:
        model = models.get(t.enroll_id)
        if model is None or t.test_id not in test_vectors:
            rejects.append(t)
            continue
        raw = scoring.score_trial(model, test_vectors[t.test_id], t.digit_string)
        if use_snorm:
            e_stats = enroll_side.lookup(t.enroll_id)
            t_stats = test_side.lookup(t.test_id)
            normalized = (
                scoring.snorm(raw, e_stats, t_stats)
                if e_stats and t_stats
                else raw
            )
        else:
            normalized = raw
        results.append(
            scoring.TrialScore(t.enroll_id, t.test_id, t.digit_string, raw, normalized, t.label)
        )
    return results, rejects
