"""Per-digit total-variability subspaces: posterior extraction, EM
training with a minimum-divergence step, average uncertainty and model
evidence.

The generative model places a standard-normal latent vector behind each
digit occurrence: the occurrence's mean supervector is the flattened
mixture's mean supervector plus a low-rank subspace times the latent
vector. Given zero/first-order statistics the latent posterior is normal
with closed-form mean and covariance; its covariance never exceeds the
prior along any direction.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import linalg

from .errors import ConfigError, EmptyInput, NumericalError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class IVectorExtractor:
    """Subspace model of one digit.

    m: (C*F,) mean supervector; T: (C*F, R) subspace; sigma: (C*F,)
    diagonal of the block-diagonal covariance. Both m and sigma come from
    the digit's flattened mixture.
    """

    digit: int
    m: np.ndarray
    T: np.ndarray
    sigma: np.ndarray
    num_components: int
    seed: int = 0
    iteration_log: list = field(default_factory=list)

    @property
    def rank(self):
        return self.T.shape[1]

    @property
    def dim(self):
        return self.m.shape[0] // self.num_components

    def copy(self):
        return IVectorExtractor(
            self.digit,
            self.m.copy(),
            self.T.copy(),
            self.sigma.copy(),
            self.num_components,
            self.seed,
            list(self.iteration_log),
        )


@dataclass
class IVectorPosterior:
    """Normal posterior of one occurrence's latent vector."""

    digit: int
    mean: np.ndarray
    covariance: np.ndarray
    utterance_id: str = ""
    occurrence: int = 0


def init_extractor(flat, rank, seed=0):
    """Seeded random-subspace initialization from a flattened mixture."""
    cf = flat.num_components * flat.dim
    if rank < 1:
        raise ConfigError("i-vector rank must be >= 1")
    if rank > cf:
        raise ConfigError(f"rank {rank} exceeds supervector dimension {cf}")
    sigma = flat.variances.reshape(-1)
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((cf, rank)) * (1e-2 * np.sqrt(sigma))[:, None]
    return IVectorExtractor(
        flat.digit, flat.means.reshape(-1).copy(), T, sigma.copy(),
        flat.num_components, seed,
    )


def _check_dims(stats, ext):
    if stats.digit != ext.digit:
        raise ShapeError(f"stats digit {stats.digit} != extractor digit {ext.digit}")
    if stats.num_components != ext.num_components or stats.dim != ext.dim:
        raise ShapeError(
            f"stats shape ({stats.num_components}, {stats.dim}) does not match "
            f"extractor ({ext.num_components}, {ext.dim})"
        )


def extract_posterior(stats, ext):
    """Latent posterior given one occurrence's statistics.

    Covariance is the inverse of (identity + weighted subspace Gram
    matrix), computed by a symmetric positive-definite solve; the mean is
    the covariance times the whitened first-order projection.
    """
    _check_dims(stats, ext)
    R = ext.rank
    n_rep = np.repeat(stats.n, ext.dim)
    Tw = ext.T / ext.sigma[:, None]
    precision = np.eye(R) + ext.T.T @ (Tw * n_rep[:, None])
    b = Tw.T @ stats.f.reshape(-1)
    cho = linalg.cho_factor(precision, lower=True)
    covariance = linalg.cho_solve(cho, np.eye(R))
    covariance = 0.5 * (covariance + covariance.T)
    mean = linalg.cho_solve(cho, b)
    return IVectorPosterior(ext.digit, mean, covariance, stats.utterance_id, stats.occurrence)


def average_uncertainty(posteriors):
    """Arithmetic mean of posterior covariances."""
    posteriors = list(posteriors)
    if not posteriors:
        raise EmptyInput("no posteriors to average")
    return sum(p.covariance for p in posteriors) / len(posteriors)


def aggregated_posterior_covariance(posteriors):
    """Second moment of posterior means about their average, plus the
    average posterior covariance."""
    posteriors = list(posteriors)
    if not posteriors:
        raise EmptyInput("no posteriors to aggregate")
    means = np.array([p.mean for p in posteriors])
    centered = means - means.mean(axis=0)
    scatter = centered.T @ centered / len(posteriors)
    return scatter + average_uncertainty(posteriors)


def minimum_divergence(ext, posteriors):
    """Rotate/scale the subspace so the aggregated posterior is white.

    The subspace is multiplied on the right by the lower Cholesky factor
    of the aggregated posterior covariance, and the posteriors are mapped
    into the new coordinates; their aggregated covariance is then the
    identity.
    """
    agg = aggregated_posterior_covariance(posteriors)
    try:
        L = np.linalg.cholesky(agg)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("aggregated posterior covariance not SPD") from exc
    new_ext = ext.copy()
    new_ext.T = ext.T @ L
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    new_posteriors = [
        IVectorPosterior(
            p.digit,
            Linv @ p.mean,
            Linv @ p.covariance @ Linv.T,
            p.utterance_id,
            p.occurrence,
        )
        for p in posteriors
    ]
    return new_ext, new_posteriors


def evidence(stats, ext):
    """Log marginal likelihood of the centralized first-order statistics.

    Closed form of the Gaussian linear model; components with zero count
    contribute nothing (empty-product convention).
    """
    _check_dims(stats, ext)
    active = stats.n > 1e-12
    if not active.any():
        return 0.0
    F = ext.dim
    sig = ext.sigma.reshape(ext.num_components, F)
    n = stats.n[active]
    f = stats.f[active]
    s = sig[active]

    logdet_noise = float(np.sum(F * np.log(n) + np.log(s).sum(axis=1)))
    quad_noise = float(np.sum(f**2 / s / n[:, None]))

    n_rep = np.repeat(stats.n, F)
    Tw = ext.T / ext.sigma[:, None]
    G = ext.T.T @ (Tw * n_rep[:, None])
    b = Tw.T @ stats.f.reshape(-1)
    precision = np.eye(ext.rank) + G
    cho = linalg.cho_factor(precision, lower=True)
    logdet_prec = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    quad_latent = float(b @ linalg.cho_solve(cho, b))

    dims = int(active.sum()) * F
    return -0.5 * (
        dims * np.log(2.0 * np.pi)
        + logdet_noise
        + logdet_prec
        + quad_noise
        - quad_latent
    )


def train_extractor(stats_list, flat, rank, n_iters=10, seed=0, min_div=True):
    """EM training of the subspace on a collection of occurrence stats.

    Returns the trained extractor and the total evidence measured at the
    start of each iteration. Each iteration extracts all posteriors,
    solves the per-component normal equations for the subspace rows and
    applies a minimum-divergence step.
    """
    stats_list = list(stats_list)
    if not stats_list:
        raise EmptyInput("no statistics to train on")
    ext = init_extractor(flat, rank, seed)
    if len(stats_list) < rank:
        log.warning(
            "only %d occurrences for rank %d; subspace may be ill-determined",
            len(stats_list), rank,
        )
    C, F, R = ext.num_components, ext.dim, rank
    evidences = []
    for _ in range(n_iters):
        evidences.append(sum(evidence(st, ext) for st in stats_list))
        posteriors = [extract_posterior(st, ext) for st in stats_list]

        A = np.zeros((C, R, R))
        B = np.zeros((C, F, R))
        for st, post in zip(stats_list, posteriors):
            second = post.covariance + np.outer(post.mean, post.mean)
            A += st.n[:, None, None] * second[None, :, :]
            B += st.f[:, :, None] * post.mean[None, None, :]
        newT = np.empty((C, F, R))
        for c in range(C):
            Ac = A[c]
            try:
                newT[c] = linalg.solve(Ac, B[c].T, assume_a="pos").T
            except np.linalg.LinAlgError:
                log.warning("singular normal equations for component %d; adding ridge", c)
                newT[c] = linalg.solve(Ac + 1e-8 * np.eye(R), B[c].T).T
        ext.T = newT.reshape(C * F, R)

        if min_div:
            posteriors = [extract_posterior(st, ext) for st in stats_list]
            ext, _ = minimum_divergence(ext, posteriors)
    ext.iteration_log = evidences
    return ext, evidences
