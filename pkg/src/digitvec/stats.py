"""Frame posteriors under a hard alignment and zero/first-order statistics.

Posteriors are restricted to the components of the aligned state: within
that state they are proportional to the weighted Gaussian likelihoods and
normalized per frame (computed in the log domain), while components of
every other state are exactly zero. Statistics are accumulated per digit
occurrence and centralized by the flattened-mixture means.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ShapeError
from .hmm import gaussian_loglik


@dataclass
class PosteriorMatrix:
    """Per-frame component posteriors of one digit occurrence.

    gammas: (L_occ, C_total) with rows summing to 1 over the components of
    the aligned state; frame_rows indexes the frames in the source
    FeatureMatrix.
    """

    digit: int
    gammas: np.ndarray
    frame_rows: np.ndarray
    utterance_id: str = ""
    occurrence: int = 0


@dataclass
class BaumWelchStats:
    """Zero/first-order statistics of one digit occurrence.

    n: (C,) soft frame counts; f: (C, F) posterior-weighted sums of
    mean-centralized frames.
    """

    digit: int
    n: np.ndarray
    f: np.ndarray
    utterance_id: str = ""
    occurrence: int = 0

    @property
    def num_components(self):
        return self.n.shape[0]

    @property
    def dim(self):
        return self.f.shape[1]

    @property
    def total_frames(self):
        return float(self.n.sum())

    def __add__(self, other):
        if self.digit != other.digit or self.f.shape != other.f.shape:
            raise ShapeError("cannot add stats of different models")
        return BaumWelchStats(
            self.digit, self.n + other.n, self.f + other.f, self.utterance_id
        )


def frame_posteriors(features, alignment, hmm, position, occurrence=0):
    """Posteriors of one digit occurrence over the digit's components.

    ``position`` selects the digit occurrence inside the alignment's digit
    string; the returned rows cover exactly its aligned voiced frames.
    """
    if int(alignment.digit_string[position]) != hmm.digit:
        raise ShapeError(
            f"alignment position {position} is digit "
            f"{alignment.digit_string[position]}, model is digit {hmm.digit}"
        )
    sel = np.nonzero(alignment.digit_position == position)[0]
    frame_rows = alignment.frame_indices[sel]
    states = alignment.state_index[sel]
    frames = features.frames[frame_rows]

    S, C = hmm.weights.shape
    gammas = np.zeros((frames.shape[0], S * C))
    log_w = np.log(np.maximum(hmm.weights, 1e-300))
    for s in np.unique(states):
        rows = np.nonzero(states == s)[0]
        ll = gaussian_loglik(frames[rows], hmm.means[s], hmm.variances[s]) + log_w[s]
        ll -= logsumexp(ll, axis=1, keepdims=True)
        gammas[rows, s * C : (s + 1) * C] = np.exp(ll)
    return PosteriorMatrix(
        hmm.digit, gammas, frame_rows, alignment.utterance_id, occurrence
    )


def accumulate_stats(features, posteriors, flat):
    """Accumulate zero/first-order stats against a flattened mixture.

    n_c sums the posteriors of component c; f_c sums the posteriors times
    the frames centralized by the component mean.
    """
    gammas = posteriors.gammas
    if gammas.shape[1] != flat.num_components:
        raise ShapeError(
            f"{gammas.shape[1]} posterior columns vs "
            f"{flat.num_components} mixture components"
        )
    frames = features.frames[posteriors.frame_rows]
    if frames.shape[1] != flat.dim:
        raise ShapeError(f"frame dim {frames.shape[1]} != mixture dim {flat.dim}")
    n = gammas.sum(axis=0)
    f = gammas.T @ frames - n[:, None] * flat.means
    return BaumWelchStats(
        flat.digit, n, f, posteriors.utterance_id, posteriors.occurrence
    )


def stats_for_utterance(features, alignment, hmms, flats):
    """Stats of every digit occurrence of one aligned utterance."""
    out = []
    for position, ch in enumerate(alignment.digit_string):
        d = int(ch)
        post = frame_posteriors(features, alignment, hmms[d], position, position)
        out.append(accumulate_stats(features, post, flats[d]))
    return out
