"""Joint (score, log-duration) densities for target and non-target trials.

Universal target/non-target mixtures are fitted on leave-one-out training
trials with the number of components chosen by message length.  Each
language then gets its own target and non-target mixture by MAP-adapting
the universal pair with that language's trials.  A raw score ``s`` for
language ``l`` on a segment of duration ``d`` becomes the log likelihood
ratio

    log f(s, log d | target_l) - log f(s, log d | nontarget_l)

using either the universal pair or the language's adapted pair.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data_io import pairs_from_matrix
from .errors import DomainError, NumericError
from .gmm import FULL, GmmModel, map_adapt
from .mml import fit_gmm_mml

logger = logging.getLogger(__name__)

LOG_DENSITY_FLOOR = -745.0


@dataclass
class ScoreDurationDensityModel:
    universal_target: GmmModel
    universal_nontarget: GmmModel
    per_language_target: dict = field(default_factory=dict)
    per_language_nontarget: dict = field(default_factory=dict)
    relevance: float = 16.0
    source: str = "gmm"
    fallback_languages: list = field(default_factory=list)

    def pair_for(self, language):
        """(target, non-target) mixtures for ``language``; universal when not adapted."""
        if language in self.per_language_target:
            return self.per_language_target[language], self.per_language_nontarget[language]
        return self.universal_target, self.universal_nontarget

    @property
    def languages(self):
        return sorted(set(self.per_language_target) | set(self.fallback_languages))

    def to_dict(self):
        return {
            "source": self.source,
            "relevance": self.relevance,
            "universal_target": self.universal_target.to_dict(),
            "universal_nontarget": self.universal_nontarget.to_dict(),
            "per_language_target": {k: v.to_dict() for k, v in sorted(self.per_language_target.items())},
            "per_language_nontarget": {k: v.to_dict() for k, v in sorted(self.per_language_nontarget.items())},
            "fallback_languages": list(self.fallback_languages),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            GmmModel.from_dict(d["universal_target"]),
            GmmModel.from_dict(d["universal_nontarget"]),
            {k: GmmModel.from_dict(v) for k, v in d["per_language_target"].items()},
            {k: GmmModel.from_dict(v) for k, v in d["per_language_nontarget"].items()},
            d["relevance"],
            d["source"],
            list(d["fallback_languages"]),
        )


def _points(pairs):
    pts = pairs.points if hasattr(pairs, "points") else np.asarray(pairs, dtype=float)
    return np.atleast_2d(pts)


def fit_universal_densities(targets, nontargets, c_max=16, min_points=50, seed=0, **mml_kwargs):
    """MML-selected full-covariance mixtures over target and non-target (score, log d) points."""
    fitted = []
    for name, pairs in (("target", targets), ("non-target", nontargets)):
        pts = _points(pairs)
        if pts.shape[0] < min_points:
            raise DomainError(f"{name} density needs at least {min_points} points, got {pts.shape[0]}")
        if np.all(pts == pts[0]):
            raise NumericError(f"all {name} points are identical")
        fitted.append(fit_gmm_mml(pts, c_max, seed=seed, covariance_kind=FULL, **mml_kwargs))
    return tuple(fitted)


def adapt_language_densities(universal_target, universal_nontarget, targets, nontargets, languages,
                             relevance=16.0, min_pairs=10):
    """Per-language MAP adaptation of the universal pair.

    Returns ``(per_language_target, per_language_nontarget, fallback)``;
    languages with fewer than ``min_pairs`` target or non-target trials keep
    the universal models and are listed in ``fallback``.
    """
    tar_models, non_models, fallback = {}, {}, []
    for lang in languages:
        tar_pts = targets.for_language(lang)
        non_pts = nontargets.for_language(lang)
        if len(tar_pts) < min_pairs or len(non_pts) < min_pairs:
            logger.warning("language %r has %d target / %d non-target trials; using universal densities",
                           lang, len(tar_pts), len(non_pts))
            fallback.append(lang)
            continue
        tar_models[lang] = map_adapt(universal_target, tar_pts, relevance)
        non_models[lang] = map_adapt(universal_nontarget, non_pts, relevance)
    return tar_models, non_models, fallback


def fit_density_model(targets, nontargets, languages, c_max=16, relevance=16.0, min_pairs=10,
                      source="gmm", seed=0, per_language=True):
    tar, non = fit_universal_densities(targets, nontargets, c_max=c_max, seed=seed)
    model = ScoreDurationDensityModel(tar, non, relevance=relevance, source=source)
    if per_language:
        (model.per_language_target, model.per_language_nontarget,
         model.fallback_languages) = adapt_language_densities(tar, non, targets, nontargets, languages,
                                                              relevance, min_pairs)
    else:
        model.fallback_languages = list(languages)
    return model


def _log_lr(target, nontarget, scores, log_durs):
    pts = np.column_stack([np.asarray(scores, dtype=float).reshape(-1),
                           np.asarray(log_durs, dtype=float).reshape(-1)])
    if not np.all(np.isfinite(pts)):
        raise DomainError("scores and log durations must be finite")
    num = np.maximum(target.log_likelihood(pts), LOG_DENSITY_FLOOR)
    den = np.maximum(nontarget.log_likelihood(pts), LOG_DENSITY_FLOOR)
    return num - den


def lr_universal(model, score, log_dur):
    """Log likelihood ratio under the universal target/non-target pair."""
    out = _log_lr(model.universal_target, model.universal_nontarget, score, log_dur)
    return float(out[0]) if np.ndim(score) == 0 else out


def lr_per_language(model, language, score, log_dur):
    """Log likelihood ratio under ``language``'s adapted pair (universal on fallback)."""
    tar, non = model.pair_for(language)
    out = _log_lr(tar, non, score, log_dur)
    return float(out[0]) if np.ndim(score) == 0 else out


def transform_scores(model, raw, per_language=True):
    """Replace every raw score by its log likelihood ratio given the segment duration."""
    if raw.kind != model.source:
        raise DomainError(f"density model was fitted on {model.source!r} scores, got {raw.kind!r}")
    known = set(model.per_language_target) | set(model.fallback_languages)
    if per_language and known and set(raw.languages) - known:
        raise DomainError(f"languages {sorted(set(raw.languages) - known)} are unknown to the density model")
    log_d = raw.log_durations
    out = np.empty_like(raw.scores)
    for col, lang in enumerate(raw.languages):
        if per_language:
            tar, non = model.pair_for(lang)
        else:
            tar, non = model.universal_target, model.universal_nontarget
        out[:, col] = _log_lr(tar, non, raw.scores[:, col], log_d)
    return raw.replace(scores=out, kind="lr")


def separation(matrix, labels):
    """Mean target score minus mean non-target score."""
    tar, non = pairs_from_matrix(matrix, labels)
    return float(np.mean(tar.scores) - np.mean(non.scores))


class DurationLRCalibrator(TransformerMixin, BaseEstimator):
    """Fit densities from a labeled training score matrix and map score matrices to log LRs.

    ``fit(matrix, labels)`` splits the (leave-one-out) matrix into target
    and non-target trials; ``transform(matrix)`` applies the per-language
    (or universal) likelihood ratio.
    """

    def __init__(self, c_max=16, relevance=16.0, min_pairs=10, per_language=True, seed=0):
        self.c_max = c_max
        self.relevance = relevance
        self.min_pairs = min_pairs
        self.per_language = per_language
        self.seed = seed

    def fit(self, matrix, labels):
        tar, non = pairs_from_matrix(matrix, labels)
        self.model_ = fit_density_model(tar, non, matrix.languages, c_max=self.c_max,
                                        relevance=self.relevance, min_pairs=self.min_pairs,
                                        source=matrix.kind, seed=self.seed, per_language=self.per_language)
        return self

    def transform(self, matrix):
        check_is_fitted(self, "model_")
        return transform_scores(self.model_, matrix, per_language=self.per_language)
