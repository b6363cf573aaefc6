"""Scatter estimation and uncertainty/channel compensation transforms.

All transforms are linear maps applied as ``y <- W.T @ y`` (except length
normalization) and are fitted per digit. Square roots are taken via
Cholesky factors so fitted matrices are deterministic.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import linalg

from .errors import ConfigError, DegenerateScatter, ZeroVector

log = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass
class ScatterSet:
    """Between/within/total scatter plus average uncertainty of a digit."""

    digit: int
    s_b: np.ndarray
    s_w: np.ndarray
    s_tot: np.ndarray
    s_u: np.ndarray = None
    n: int = 0
    n_speakers: int = 0
    global_mean: np.ndarray = None
    class_means: dict = field(default_factory=dict)


@dataclass
class Transform:
    """One linear step of a compensation chain.

    ``matrix`` is None for length normalization.
    """

    kind: str
    matrix: np.ndarray = None
    digit: int = -1

    def apply(self, y):
        if self.kind == "length_norm":
            return length_normalize(y)
        return self.matrix.T @ y


@dataclass
class TransformChain:
    """Ordered transforms of one digit."""

    digit: int
    steps: list = field(default_factory=list)

    def apply(self, y):
        for step in self.steps:
            y = step.apply(y)
        return y


def scatter_matrices(vectors_by_speaker, digit=-1):
    """Between-, within- and total-class scatter of grouped vectors.

    The between-class scatter averages squared class-mean deviations over
    speakers; the within-class scatter averages each speaker's own mean
    squared deviation, then averages over speakers; the total scatter is
    taken over all vectors.
    """
    speakers = list(vectors_by_speaker)
    if len(speakers) < 2:
        raise DegenerateScatter("need at least two speakers")
    all_vecs = np.concatenate([np.atleast_2d(vectors_by_speaker[s]) for s in speakers])
    n, R = all_vecs.shape
    global_mean = all_vecs.mean(axis=0)

    s_b = np.zeros((R, R))
    s_w = np.zeros((R, R))
    class_means = {}
    for s in speakers:
        vecs = np.atleast_2d(vectors_by_speaker[s])
        mean_s = vecs.mean(axis=0)
        class_means[s] = mean_s
        dev = mean_s - global_mean
        s_b += np.outer(dev, dev)
        centered = vecs - mean_s
        s_w += centered.T @ centered / vecs.shape[0]
    s_b /= len(speakers)
    s_w /= len(speakers)
    centered = all_vecs - global_mean
    s_tot = centered.T @ centered / n
    return ScatterSet(
        digit, s_b, s_w, s_tot,
        n=n, n_speakers=len(speakers),
        global_mean=global_mean, class_means=class_means,
    )


def _floored_spd(mat):
    """Add a trace-scaled ridge if the Cholesky factorization fails."""
    try:
        return np.linalg.cholesky(mat), mat
    except np.linalg.LinAlgError:
        ridge = RIDGE * max(np.trace(mat), 1.0) / mat.shape[0]
        log.warning("matrix not positive definite; adding ridge %.3g", ridge)
        floored = mat + ridge * np.eye(mat.shape[0])
        return np.linalg.cholesky(floored), floored


def _whitening_transform(mat, kind, digit):
    """W with W @ W.T equal to the inverse of ``mat``."""
    L, _ = _floored_spd(mat)
    W = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True).T
    return Transform(kind, W, digit)


def fit_uncertain_wccn(scatter):
    """Whitening of the within-class scatter plus average uncertainty."""
    return _whitening_transform(scatter.s_w + scatter.s_u, "uncertain_wccn", scatter.digit)


def fit_uncertainty_norm(s_u, digit=-1):
    """Whitening of the average posterior uncertainty.

    Unsupervised: needs no speaker grouping, only the average uncertainty.
    """
    return _whitening_transform(np.asarray(s_u), "uncertainty_norm", digit)


def fit_uncertain_lda(scatter, out_dim):
    """Discriminant directions of the between-class scatter against the
    within-class scatter inflated by the average uncertainty.

    Columns are the top generalized eigenvectors, normalized so the
    projected inflated within-class scatter is the identity.
    """
    R = scatter.s_b.shape[0]
    if out_dim > R:
        raise ConfigError(f"out_dim {out_dim} exceeds input dimension {R}")
    _, denom = _floored_spd(scatter.s_w + scatter.s_u)
    eigvals, eigvecs = linalg.eigh(scatter.s_b, denom)
    order = np.argsort(eigvals)[::-1]
    W = eigvecs[:, order[:out_dim]]
    return Transform("uncertain_lda", W, scatter.digit)


def fit_regularized_lda(scatter, reg_coeff=1.0):
    """Full-rank LDA with a trace-scaled ridge on the between-class scatter."""
    if reg_coeff < 0:
        raise ConfigError("reg_coeff must be nonnegative")
    R = scatter.s_b.shape[0]
    beta = reg_coeff * np.trace(scatter.s_b) / R
    _, denom = _floored_spd(scatter.s_w)
    eigvals, eigvecs = linalg.eigh(scatter.s_b + beta * np.eye(R), denom)
    order = np.argsort(eigvals)[::-1]
    return Transform("regularized_lda", eigvecs[:, order], scatter.digit)


def length_normalize(v):
    """Scale a vector to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ZeroVector("cannot length-normalize the zero vector")
    return v / norm


CHAIN_METHODS = ("uncertainty_norm", "uncertain_wccn", "uncertain_lda", "none")


def build_chain(method, vectors_by_speaker, covariances, digit=-1,
                reg_coeff=1.0, lda_dim=None):
    """Fit a compensation chain of the selected flavour.

    Steps are fitted sequentially: each transform is estimated on the
    vectors as mapped by the steps before it, so the final discriminant
    step sees length-normalized, whitened vectors.

    - ``uncertainty_norm``: uncertainty whitening, length norm, regularized LDA
    - ``uncertain_wccn``: within-class+uncertainty whitening, length norm,
      regularized LDA
    - ``uncertain_lda``: single discriminant step on inflated within-class
      scatter
    - ``none``: identity chain
    """
    if method not in CHAIN_METHODS:
        raise ConfigError(f"unknown compensation method: {method!r}")
    chain = TransformChain(digit)
    if method == "none":
        return chain

    covariances = list(covariances)
    s_u = sum(covariances) / len(covariances) if covariances else None

    if method == "uncertain_lda":
        scatter = scatter_matrices(vectors_by_speaker, digit)
        scatter.s_u = s_u
        dim = lda_dim or scatter.s_b.shape[0]
        chain.steps.append(fit_uncertain_lda(scatter, dim))
        return chain

    if method == "uncertainty_norm":
        first = fit_uncertainty_norm(s_u, digit)
    else:
        scatter = scatter_matrices(vectors_by_speaker, digit)
        scatter.s_u = s_u
        first = fit_uncertain_wccn(scatter)
    chain.steps.append(first)
    chain.steps.append(Transform("length_norm", None, digit))

    mapped = {
        spk: np.array([
            length_normalize(first.apply(np.asarray(v)))
            for v in np.atleast_2d(vectors_by_speaker[spk])
        ])
        for spk in vectors_by_speaker
    }
    mapped_scatter = scatter_matrices(mapped, digit)
    chain.steps.append(fit_regularized_lda(mapped_scatter, reg_coeff))
    return chain
