"""Digit-specific left-to-right HMMs: flat-start init, Viterbi training,
forced alignment and flattening into per-digit GMMs.

Each digit owns an HMM with ``S`` states and a diagonal-covariance GMM per
state. Utterances are aligned against the concatenation of the HMMs of
their digit string under a left-to-right, no-skip topology, so the state
index per frame stays or advances by one. Training is segmental: a single
Viterbi alignment per utterance, followed by per-state GMM re-estimation
and (optionally) transition-count re-estimation.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.special import logsumexp

from ._kernels import viterbi_path
from .errors import AlignmentInfeasible, ConfigError, MissingDigit, ShapeError

log = logging.getLogger(__name__)

DIGITS = "0123456789"
# probability of leaving a digit's final state when HMMs are concatenated
EXIT_PROB = 0.5


@dataclass
class DigitHmm:
    """Left-to-right HMM of one digit.

    weights: (S, C), means/variances: (S, C, F), trans: (S, S) row
    stochastic and upper-bidiagonal with a self-loop of 1 in the last
    state. ``occupancy`` is the training frame mass per state, used when
    flattening.
    """

    digit: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    trans: np.ndarray
    occupancy: np.ndarray = None

    def __post_init__(self):
        if self.occupancy is None:
            self.occupancy = np.ones(self.num_states)

    @property
    def num_states(self):
        return self.means.shape[0]

    @property
    def num_components(self):
        return self.means.shape[1]

    @property
    def dim(self):
        return self.means.shape[2]

    def copy(self):
        return DigitHmm(
            self.digit,
            self.weights.copy(),
            self.means.copy(),
            self.variances.copy(),
            self.trans.copy(),
            self.occupancy.copy(),
        )


@dataclass
class Alignment:
    """Frame-to-state assignment of one utterance (voiced frames only)."""

    utterance_id: str
    digit_string: str
    frame_indices: np.ndarray  # row indices into the full FeatureMatrix
    digit_position: np.ndarray  # index into digit_string, per voiced frame
    state_index: np.ndarray  # state within the digit's HMM, per voiced frame
    score: float

    def digit_spans(self):
        """(position, digit, start, stop) slices over voiced frames."""
        spans = []
        pos = np.asarray(self.digit_position)
        for p in range(len(self.digit_string)):
            where = np.nonzero(pos == p)[0]
            if where.size:
                spans.append((p, self.digit_string[p], where[0], where[-1] + 1))
        return spans


@dataclass
class FlatGmm:
    """State GMMs of a digit HMM concatenated into a single mixture."""

    digit: int
    weights: np.ndarray  # (C_total,)
    means: np.ndarray  # (C_total, F)
    variances: np.ndarray  # (C_total, F)

    @property
    def num_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


def gaussian_loglik(frames, means, variances):
    """Log density of each frame under each diagonal Gaussian.

    frames: (L, F); means, variances: (C, F). Returns (L, C).
    """
    frames = np.atleast_2d(frames)
    if frames.shape[1] != means.shape[1]:
        raise ShapeError(
            f"frame dim {frames.shape[1]} != model dim {means.shape[1]}"
        )
    inv_var = 1.0 / variances
    const = -0.5 * (
        means.shape[1] * np.log(2.0 * np.pi)
        + np.sum(np.log(variances), axis=1)
        + np.sum(means**2 * inv_var, axis=1)
    )
    quad = -0.5 * frames**2 @ inv_var.T + frames @ (means * inv_var).T
    return quad + const[None, :]


def _state_loglik(frames, hmm):
    """(L, S) log GMM likelihood of frames under each state of one HMM."""
    L = frames.shape[0]
    out = np.empty((L, hmm.num_states))
    for s in range(hmm.num_states):
        comp = gaussian_loglik(frames, hmm.means[s], hmm.variances[s])
        out[:, s] = logsumexp(comp + np.log(hmm.weights[s])[None, :], axis=1)
    return out


def _kmeans(frames, k, rng, n_iters=20):
    """Seeded Lloyd k-means; returns (centroids, labels)."""
    n = frames.shape[0]
    if n < k:
        # too few frames: replicate with jitter so every cluster is seeded
        reps = int(np.ceil(k / n)) + 1
        jitter = 1e-3 * (frames.std() + 1e-8)
        frames = np.concatenate(
            [frames + jitter * rng.standard_normal(frames.shape) for _ in range(reps)]
        )
        n = frames.shape[0]
    centroids = frames[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iters):
        dist = ((frames[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for c in range(k):
            sel = labels == c
            if sel.any():
                centroids[c] = frames[sel].mean(axis=0)
            else:
                centroids[c] = frames[rng.integers(n)]
    return centroids, labels


def _init_state_gmm(frames, n_comps, var_floor, rng):
    """K-means flat start of a state GMM on its assigned frames."""
    F = frames.shape[1]
    centroids, labels = _kmeans(frames, n_comps, rng)
    weights = np.empty(n_comps)
    variances = np.empty((n_comps, F))
    for c in range(n_comps):
        sel = labels == c
        weights[c] = max(sel.sum(), 1)
        if sel.sum() >= 2:
            variances[c] = np.maximum(frames[sel].var(axis=0), var_floor)
        else:
            variances[c] = np.maximum(frames.var(axis=0), var_floor)
    weights /= weights.sum()
    return weights, centroids, variances


def _default_trans(n_states):
    trans = np.zeros((n_states, n_states))
    for s in range(n_states - 1):
        trans[s, s] = 0.5
        trans[s, s + 1] = 0.5
    trans[n_states - 1, n_states - 1] = 1.0
    return trans


def init_digit_hmms(corpus, n_states=8, n_comps=8, seed=0, digits=None):
    """Flat-start initialization of the digit HMM set.

    Each utterance's voiced frames are split uniformly across its digits
    and each digit's span uniformly across states; per-state GMMs are then
    initialized by k-means on the pooled assignments. ``digits`` selects
    the modelled digit set (all ten by default); a requested digit absent
    from the corpus is an error.
    """
    if n_states < 1 or n_comps < 1:
        raise ConfigError("n_states and n_comps must be >= 1")
    if digits is None:
        digits = range(10)
    digits = sorted(int(d) for d in digits)
    rng = np.random.default_rng(seed)
    pooled = {d: [[] for _ in range(n_states)] for d in digits}
    all_frames = []
    for feats in corpus:
        voiced = feats.voiced_frames()
        all_frames.append(voiced)
        n_digits = len(feats.digit_string)
        digit_bounds = np.linspace(0, voiced.shape[0], n_digits + 1).astype(int)
        for i, ch in enumerate(feats.digit_string):
            if int(ch) not in pooled:
                continue
            seg = voiced[digit_bounds[i] : digit_bounds[i + 1]]
            state_bounds = np.linspace(0, seg.shape[0], n_states + 1).astype(int)
            for s in range(n_states):
                chunk = seg[state_bounds[s] : state_bounds[s + 1]]
                if chunk.shape[0]:
                    pooled[int(ch)][s].append(chunk)

    global_var = np.concatenate(all_frames).var(axis=0)
    var_floor = np.maximum(1e-4 * global_var, 1e-10)

    hmms = {}
    for d in digits:
        if not any(len(chunks) for chunks in pooled[d]):
            raise MissingDigit(d)
        F = all_frames[0].shape[1]
        weights = np.empty((n_states, n_comps))
        means = np.empty((n_states, n_comps, F))
        variances = np.empty((n_states, n_comps, F))
        occupancy = np.empty(n_states)
        for s in range(n_states):
            chunks = pooled[d][s]
            if chunks:
                frames = np.concatenate(chunks)
            else:
                # starved at init: borrow the digit's pooled frames
                frames = np.concatenate([c for cs in pooled[d] for c in cs])
            occupancy[s] = frames.shape[0]
            weights[s], means[s], variances[s] = _init_state_gmm(
                frames, n_comps, var_floor, rng
            )
        hmms[d] = DigitHmm(d, weights, means, variances, _default_trans(n_states), occupancy)
    return hmms


def _concat_model(digit_string, hmms):
    """Per-state stay/advance log probs of the concatenated chain."""
    log_stay, log_adv, owners = [], [], []
    n_digits = len(digit_string)
    for i, ch in enumerate(digit_string):
        hmm = hmms[int(ch)]
        S = hmm.num_states
        for s in range(S):
            owners.append((i, s))
            if s < S - 1:
                log_stay.append(np.log(max(hmm.trans[s, s], 1e-300)))
                log_adv.append(np.log(max(hmm.trans[s, s + 1], 1e-300)))
            elif i < n_digits - 1:
                # leaving a digit: fixed exit mass, not stored in trans
                log_stay.append(np.log(1.0 - EXIT_PROB))
                log_adv.append(np.log(EXIT_PROB))
            else:
                log_stay.append(0.0)
                log_adv.append(-np.inf)
    return np.array(log_stay), np.array(log_adv), owners


def viterbi_align(features, digit_string, hmms):
    """Forced alignment of one utterance against its digit string."""
    for ch in digit_string:
        if int(ch) not in hmms:
            raise MissingDigit(int(ch))
    voiced_idx = np.nonzero(features.voiced_mask)[0]
    frames = features.frames[voiced_idx]
    total_states = sum(hmms[int(ch)].num_states for ch in digit_string)
    if frames.shape[0] < total_states:
        raise AlignmentInfeasible(
            f"{frames.shape[0]} voiced frames < {total_states} states"
        )
    emit = np.hstack([_state_loglik(frames, hmms[int(ch)]) for ch in digit_string])
    log_stay, log_adv, owners = _concat_model(digit_string, hmms)
    path, score = viterbi_path(emit, log_stay, log_adv)
    if not np.isfinite(score):
        raise AlignmentInfeasible("no feasible left-to-right path")
    digit_position = np.array([owners[j][0] for j in path])
    state_index = np.array([owners[j][1] for j in path])
    return Alignment(
        features.utterance_id,
        digit_string,
        voiced_idx,
        digit_position,
        state_index,
        score,
    )


def _gmm_em_update(frames, weights, means, variances, var_floor, n_iters=2):
    """A few EM iterations of a diagonal GMM on its assigned frames."""
    C = weights.shape[0]
    for _ in range(n_iters):
        resp_log = gaussian_loglik(frames, means, variances) + np.log(
            np.maximum(weights, 1e-300)
        )
        norm = logsumexp(resp_log, axis=1, keepdims=True)
        resp = np.exp(resp_log - norm)
        counts = resp.sum(axis=0)
        nonempty = counts > 1e-8
        weights = np.where(nonempty, counts, 1e-8)
        weights = weights / weights.sum()
        for c in range(C):
            if not nonempty[c]:
                continue
            means[c] = resp[:, c] @ frames / counts[c]
            sq = resp[:, c] @ (frames - means[c]) ** 2 / counts[c]
            variances[c] = np.maximum(sq, var_floor)
    return weights, means, variances


def viterbi_train(corpus, hmms, n_iters=5, reestimate_trans=True, em_iters=2):
    """Segmental (Viterbi) training of the digit HMM set.

    Returns the updated HMMs and the total Viterbi log-likelihood measured
    at the start of each iteration. Starved states are recovered by
    splitting the heaviest component of a neighbouring state.
    """
    hmms = {d: h.copy() for d, h in hmms.items()}
    logliks = []
    if n_iters == 0:
        return hmms, logliks

    global_var = np.concatenate([f.voiced_frames() for f in corpus]).var(axis=0)
    var_floor = np.maximum(1e-4 * global_var, 1e-10)

    for _ in range(n_iters):
        assigned = {
            d: [[] for _ in range(hmms[d].num_states)] for d in hmms
        }
        stay_counts = {d: np.zeros(hmms[d].num_states) for d in hmms}
        adv_counts = {d: np.zeros(hmms[d].num_states) for d in hmms}
        total = 0.0
        for feats in corpus:
            ali = viterbi_align(feats, feats.digit_string, hmms)
            total += ali.score
            frames = feats.frames[ali.frame_indices]
            for t in range(frames.shape[0]):
                d = int(feats.digit_string[ali.digit_position[t]])
                assigned[d][ali.state_index[t]].append(frames[t])
                if t + 1 < frames.shape[0]:
                    same_digit = ali.digit_position[t + 1] == ali.digit_position[t]
                    if same_digit and ali.state_index[t + 1] == ali.state_index[t]:
                        stay_counts[d][ali.state_index[t]] += 1
                    elif same_digit:
                        adv_counts[d][ali.state_index[t]] += 1
        logliks.append(total)

        for d, hmm in hmms.items():
            for s in range(hmm.num_states):
                if not assigned[d][s]:
                    _recover_starved_state(hmm, s, d)
                    continue
                frames = np.asarray(assigned[d][s])
                hmm.occupancy[s] = frames.shape[0]
                w, m, v = _gmm_em_update(
                    frames,
                    hmm.weights[s].copy(),
                    hmm.means[s].copy(),
                    hmm.variances[s].copy(),
                    var_floor,
                    n_iters=em_iters,
                )
                hmm.weights[s], hmm.means[s], hmm.variances[s] = w, m, v
            if reestimate_trans:
                for s in range(hmm.num_states - 1):
                    n = stay_counts[d][s] + adv_counts[d][s]
                    if n > 0:
                        p_stay = min(max(stay_counts[d][s] / n, 1e-3), 1.0 - 1e-3)
                        hmm.trans[s, s] = p_stay
                        hmm.trans[s, s + 1] = 1.0 - p_stay
    return hmms, logliks


def _recover_starved_state(hmm, s, digit):
    """Reseed a starved state from the heaviest component of a neighbour."""
    neighbour = s - 1 if s > 0 else s + 1
    if not 0 <= neighbour < hmm.num_states:
        return
    log.warning("state %d of digit %d starved; splitting neighbour %d", s, digit, neighbour)
    c = int(np.argmax(hmm.weights[neighbour]))
    hmm.means[s] = hmm.means[neighbour][c][None, :] + 1e-3 * np.sqrt(
        hmm.variances[neighbour][c]
    )
    hmm.variances[s] = hmm.variances[neighbour][c][None, :]
    hmm.weights[s] = np.full(hmm.num_components, 1.0 / hmm.num_components)
    hmm.occupancy[s] = 1.0


def flatten_hmm(hmm):
    """Concatenate all state GMMs into one mixture.

    Component (s, c) gets weight w[s, c] * occ(s) / sum(occ); Gaussian
    parameters are copied untouched.
    """
    occ = hmm.occupancy / hmm.occupancy.sum()
    weights = (hmm.weights * occ[:, None]).reshape(-1)
    weights = weights / weights.sum()
    means = hmm.means.reshape(-1, hmm.dim)
    variances = hmm.variances.reshape(-1, hmm.dim)
    return FlatGmm(hmm.digit, weights, means.copy(), variances.copy())
