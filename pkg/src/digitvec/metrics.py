"""Detection metrics: DET operating points, EER and normalized minimum
detection cost.

Convention: a trial is accepted iff its score is greater than or equal to
the threshold; thresholds run over every distinct score plus +inf.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrialSet


@dataclass
class DetCurve:
    """Operating points sorted by ascending threshold."""

    thresholds: np.ndarray
    far: np.ndarray  # false acceptance rate per threshold
    frr: np.ndarray  # false rejection rate per threshold
    num_targets: int
    num_nontargets: int


@dataclass
class DcfParams:
    c_miss: float
    c_fa: float
    p_target: float

    def __post_init__(self):
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError("p_target must lie in (0, 1)")


# published NIST SRE evaluation parameters
DCF_OLD = DcfParams(c_miss=10.0, c_fa=1.0, p_target=0.01)
DCF_NEW = DcfParams(c_miss=1.0, c_fa=1.0, p_target=0.001)


def compute_det(scores, labels):
    """Operating points at every distinct score (and +inf)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_tgt = int(labels.sum())
    n_non = int((~labels).sum())
    if n_tgt == 0 or n_non == 0:
        raise DegenerateTrialSet(
            f"need both classes, got {n_tgt} targets / {n_non} nontargets"
        )
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    far = np.empty_like(thresholds)
    frr = np.empty_like(thresholds)
    tgt = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    for i, th in enumerate(thresholds):
        far[i] = np.sum(non >= th) / n_non
        frr[i] = np.sum(tgt < th) / n_tgt
    return DetCurve(thresholds, far, frr, n_tgt, n_non)


def compute_eer(curve):
    """Rate where false acceptance equals false rejection.

    Linear interpolation between the adjacent operating points where the
    sign of (FAR - FRR) changes.
    """
    # FAR is non-increasing and FRR non-decreasing in the threshold, so
    # the difference crosses zero exactly once
    diff = curve.far - curve.frr
    idx = np.nonzero(diff <= 0)[0]
    if idx.size == 0:
        return 1.0
    i = idx[0]
    if diff[i] == 0 or i == 0:
        return float(curve.far[i])
    # interpolate between points i-1 (diff > 0) and i (diff < 0)
    d0, d1 = diff[i - 1], diff[i]
    w = d0 / (d0 - d1)
    eer = (1 - w) * (curve.far[i - 1] + curve.frr[i - 1]) / 2 + w * (
        curve.far[i] + curve.frr[i]
    ) / 2
    return float(eer)


def compute_min_dcf(curve, params):
    """Minimum normalized detection cost over all operating points."""
    cost = params.c_miss * params.p_target * curve.frr + params.c_fa * (
        1.0 - params.p_target
    ) * curve.far
    norm = min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))
    return float(cost.min() / norm)


def det_csv(curve):
    """DET points as CSV text for external plotting."""
    lines = ["threshold,far,frr"]
    for th, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
        lines.append(f"{th},{fa},{fr}")
    return "\n".join(lines) + "\n"
