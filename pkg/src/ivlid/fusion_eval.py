"""Linear score fusion with a log-duration quality term, open-set decisions, cost and DET."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator

from .data_io import OUT_OF_SET, TrialScoreMatrix
from .errors import DimensionError, DomainError

logger = logging.getLogger(__name__)


@dataclass
class FusionModel:
    """``fused = sum_j weights[j] * s_j + quality_weight * log d + offset``."""

    weights: np.ndarray
    quality_weight: float = 0.0
    offset: float = 0.0
    use_duration: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.quality_weight)
                and np.isfinite(self.offset)):
            raise DomainError("fusion parameters must be finite")

    def apply(self, matrices):
        matrices = _aligned(matrices)
        if len(matrices) != len(self.weights):
            raise DimensionError(f"fusion expects {len(self.weights)} subsystems, got {len(matrices)}")
        fused = sum(w * m.scores for w, m in zip(self.weights, matrices))
        fused = fused + self.quality_weight * matrices[0].log_durations[:, None] + self.offset
        return matrices[0].replace(scores=fused, kind="fused")

    def to_dict(self):
        return {"weights": self.weights, "quality_weight": self.quality_weight,
                "offset": self.offset, "use_duration": self.use_duration}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["quality_weight"], d["offset"], d["use_duration"])


@dataclass(frozen=True)
class DecisionPolicy:
    threshold: float
    out_of_set_label: str = OUT_OF_SET

    def to_dict(self):
        return {"threshold": self.threshold, "out_of_set_label": self.out_of_set_label}

    @classmethod
    def from_dict(cls, d):
        return cls(d["threshold"], d["out_of_set_label"])


@dataclass(frozen=True)
class CostParams:
    n: int = 50
    p_oos: float = 0.23
    scale: float = 100.0

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if not 0.0 <= self.p_oos <= 1.0:
            raise DomainError("p_oos must lie in [0, 1]")


def _aligned(matrices):
    if isinstance(matrices, TrialScoreMatrix):
        matrices = [matrices]
    matrices = list(matrices)
    if not matrices:
        raise DomainError("at least one subsystem is required")
    first = matrices[0]
    for m in matrices[1:]:
        if m.ids != first.ids or m.languages != first.languages:
            raise DimensionError("subsystem score matrices are not aligned (ids or languages differ)")
    return matrices


def _target_mask(matrix, labels):
    labels = np.asarray(list(labels), dtype=object)
    if len(labels) != len(matrix):
        raise DimensionError("labels and score matrix rows differ in length")
    return labels[:, None] == np.asarray(matrix.languages, dtype=object)[None, :]


def train_fusion(matrices, labels, use_duration=True, target_prior=0.5, max_iter=1000, tol=1e-8):
    """Prior-weighted logistic regression over all (segment, language) trials.

    Target and non-target trials are reweighted to ``target_prior`` and
    ``1 - target_prior`` of the total mass.
    """
    matrices = _aligned(matrices)
    is_tar = _target_mask(matrices[0], labels).ravel()
    n_tar, n_non = int(is_tar.sum()), int((~is_tar).sum())
    if n_tar == 0 or n_non == 0:
        raise DomainError("fusion training needs both target and non-target trials")
    cols = [m.scores.ravel() for m in matrices]
    if use_duration:
        cols.append(np.repeat(matrices[0].log_durations, len(matrices[0].languages)))
    X = np.column_stack(cols)
    centre = X.mean(axis=0)
    spread = X.std(axis=0)
    spread[spread == 0] = 1.0
    Z = (X - centre) / spread
    sign = np.where(is_tar, 1.0, -1.0)
    weight = np.where(is_tar, target_prior / n_tar, (1.0 - target_prior) / n_non)

    def objective(theta):
        z = Z @ theta[:-1] + theta[-1]
        m = sign * z
        f = -np.sum(weight * log_expit(m))
        g_z = -weight * sign * expit(-m)
        return f, np.append(Z.T @ g_z, g_z.sum())

    theta0 = np.zeros(Z.shape[1] + 1)
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15})
    coef = res.x[:-1] / spread
    offset = res.x[-1] - float(coef @ centre)
    n_sub = len(matrices)
    return FusionModel(coef[:n_sub], float(coef[n_sub]) if use_duration else 0.0, offset, use_duration)


def apply_fusion(model, matrices):
    return model.apply(matrices)


class LinearFusion(BaseEstimator):
    """Estimator form: ``fit(list_of_matrices, labels)`` then ``transform(list_of_matrices)``."""

    def __init__(self, use_duration=True, target_prior=0.5, max_iter=1000, tol=1e-8):
        self.use_duration = use_duration
        self.target_prior = target_prior
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, matrices, labels):
        self.model_ = train_fusion(matrices, labels, self.use_duration, self.target_prior,
                                   self.max_iter, self.tol)
        return self

    def transform(self, matrices):
        return self.model_.apply(matrices)


# ---------------------------------------------------------------------------
# decisions and cost


def decide_indices(scores, threshold):
    """Argmax column per row, or -1 where the row maximum does not exceed ``threshold``."""
    best = np.argmax(scores, axis=1)
    top = scores[np.arange(len(scores)), best]
    return np.where(top > threshold, best, -1)


def decide(matrix, policy):
    """id -> language (first in order on ties) if its top score exceeds the threshold, else out-of-set."""
    if len(matrix) == 0 or not matrix.languages:
        raise DomainError("cannot decide on an empty score matrix")
    idx = decide_indices(matrix.scores, policy.threshold)
    return {rid: (matrix.languages[j] if j >= 0 else policy.out_of_set_label)
            for rid, j in zip(matrix.ids, idx)}


def compute_cost(decisions, truth, params=CostParams(), out_of_set_label=OUT_OF_SET):
    """Open-set identification cost, multiplied by ``params.scale``.

    ``decisions`` and ``truth`` map segment id to a language or the
    out-of-set label; every decided id must have a truth entry.
    """
    missing = [rid for rid in decisions if rid not in truth]
    if missing:
        raise DomainError(f"no truth label for {len(missing)} decided id(s), e.g. {missing[0]!r}")
    trials, errors = {}, {}
    for rid, decided in decisions.items():
        true = truth[rid]
        trials[true] = trials.get(true, 0) + 1
        errors[true] = errors.get(true, 0) + (decided != true)
    in_set = [k for k in trials if k != out_of_set_label]
    if len(in_set) > params.n:
        raise DomainError(f"truth has {len(in_set)} in-set classes but n = {params.n}")
    if len(in_set) < params.n:
        logger.warning("%d of %d in-set classes have no trials; they contribute zero error",
                       params.n - len(in_set), params.n)
    in_set_error = sum(errors[k] / trials[k] for k in sorted(in_set))
    if out_of_set_label in trials:
        oos_error = errors[out_of_set_label] / trials[out_of_set_label]
    else:
        if params.p_oos > 0:
            logger.warning("no out-of-set trials; their error term is zero")
        oos_error = 0.0
    cost = (1.0 - params.p_oos) / params.n * in_set_error + params.p_oos * oos_error
    return params.scale * cost


def _cost_grid(scores, truth_idx, thresholds, params):
    """Cost for every threshold at once; ``truth_idx`` is -1 for out-of-set rows."""
    best = np.argmax(scores, axis=1)
    top = scores[np.arange(len(scores)), best]
    accept = top[None, :] > np.asarray(thresholds)[:, None]
    decided = np.where(accept, best[None, :], -1)
    wrong = decided != truth_idx[None, :]
    classes = np.unique(truth_idx)
    in_set = classes[classes >= 0]
    in_err = np.zeros(len(thresholds))
    for k in in_set:
        rows = truth_idx == k
        in_err += wrong[:, rows].mean(axis=1)
    oos_rows = truth_idx < 0
    oos_err = wrong[:, oos_rows].mean(axis=1) if oos_rows.any() else np.zeros(len(thresholds))
    return params.scale * ((1.0 - params.p_oos) / params.n * in_err + params.p_oos * oos_err)


def _truth_indices(matrix, labels, out_of_set_label=OUT_OF_SET):
    index = {lang: i for i, lang in enumerate(matrix.languages)}
    out = []
    for lab in labels:
        if lab == out_of_set_label:
            out.append(-1)
        elif lab in index:
            out.append(index[lab])
        else:
            raise DomainError(f"label {lab!r} is neither a scored language nor out-of-set")
    return np.array(out, dtype=int)


def threshold_grid(matrix, grid_size=512):
    tops = matrix.scores.max(axis=1)
    return np.unique(np.quantile(tops, np.linspace(0.0, 1.0, grid_size)))


def tune_threshold(matrix, labels, params=CostParams(), grid_size=512, out_of_set_label=OUT_OF_SET):
    """Threshold on the quantile grid of row maxima minimizing the cost (smallest on ties)."""
    if len(matrix) == 0:
        raise DomainError("cannot tune a threshold on an empty score matrix")
    truth_idx = _truth_indices(matrix, labels, out_of_set_label)
    grid = threshold_grid(matrix, grid_size)
    costs = _cost_grid(matrix.scores, truth_idx, grid, params)
    best = int(np.flatnonzero(costs == costs.min())[0])
    return DecisionPolicy(float(grid[best]), out_of_set_label)


def with_pseudo_out_of_set(matrix, labels, out_of_set_label=OUT_OF_SET):
    """Append a copy of every labeled row with its true-language score masked, labeled out-of-set.

    A masked row looks like a segment from a language the system was not
    trained on, which gives threshold tuning out-of-set examples drawn from
    training data only.  Masked entries are set below the row minimum.
    """
    labels = list(labels)
    truth_idx = _truth_indices(matrix, labels, out_of_set_label)
    rows = np.flatnonzero(truth_idx >= 0)
    masked = matrix.scores[rows].copy()
    masked[np.arange(len(rows)), truth_idx[rows]] = masked.min(axis=1) - 1.0
    ids = matrix.ids + [f"{matrix.ids[r]}#oos" for r in rows]
    out = TrialScoreMatrix(ids, np.concatenate([matrix.durations, matrix.durations[rows]]),
                           matrix.languages, np.vstack([matrix.scores, masked]), matrix.kind)
    return out, labels + [out_of_set_label] * len(rows)


# ---------------------------------------------------------------------------
# DET


def det_points(scores, is_target):
    """(false_alarm_rate, miss_rate, threshold) at every distinct score plus a final ``+inf``.

    At threshold ``t`` a trial is accepted when its score is ``>= t``.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    is_target = np.asarray(is_target, dtype=bool).ravel()
    tar = np.sort(scores[is_target])
    non = np.sort(scores[~is_target])
    if tar.size == 0 or non.size == 0:
        raise DomainError("DET needs at least one target and one non-target trial")
    thresholds = np.append(np.unique(scores), np.inf)
    miss = np.searchsorted(tar, thresholds, side="left") / tar.size
    fa = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    return [(float(f), float(m), float(t)) for f, m, t in zip(fa, miss, thresholds)]


def det_points_matrix(matrix, labels):
    return det_points(matrix.scores, _target_mask(matrix, labels))


def equal_error_rate(points):
    """Linear interpolation of the crossing of miss and false-alarm rates along a DET sweep."""
    fa = np.array([p[0] for p in points])
    miss = np.array([p[1] for p in points])
    diff = miss - fa
    cross = np.flatnonzero(diff >= 0)
    if cross.size == 0:
        return float(fa[-1])
    i = int(cross[0])
    if i == 0 or diff[i] == 0:
        return float((fa[i] + miss[i]) / 2.0)
    d0, d1 = diff[i - 1], diff[i]
    t = d0 / (d0 - d1)
    return float(fa[i - 1] + t * (fa[i] - fa[i - 1]))
