"""End-to-end recipe: preprocessing, the three scorers, duration LR, fusion and evaluation.

Systems:

``baseline``  cosine scoring on whitened, normalized vectors
``gmm``       GMM-UBM log-likelihood ratios                       (A)
``dnn``       network posterior log-odds                           (B)
``fusion_ab`` linear fusion of A and B with a log-duration term
``gmm_lr``    per-language score/duration likelihood ratio of A    (C)
``dnn_lr``    per-language score/duration likelihood ratio of B    (D)
``fusion_cd`` linear fusion of C and D with a log-duration term

Every system is scored on the training set without self-contamination
(leave-one-out for GMM and cosine, k-fold cross-fitting for the network);
those training scores fit the densities and the fusion and tune the
out-of-set threshold.
"""

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import data_io
from .baseline import loo_cosine_matrix, score_cosine_corpus, train_cosine
from .data_io import OUT_OF_SET, TrialScoreMatrix, pairs_from_matrix
from .dnn import TrainConfig, init_dnn, score_dnn, train_dnn
from .duration_fusion import fit_density_model, transform_scores
from .errors import DomainError
from .fusion_eval import (CostParams, compute_cost, decide, det_points_matrix, equal_error_rate,
                          train_fusion, tune_threshold, with_pseudo_out_of_set)
from .gmm import DIAGONAL
from .preprocess import IVectorPreprocessor, preprocess_corpus
from .subsystem_gmm import loo_score_matrix, score_gmm, train_language_models
from .synth import SynthSpec, generate_synthetic_corpus

logger = logging.getLogger(__name__)

SYSTEMS = ("baseline", "gmm", "dnn", "fusion_ab", "gmm_lr", "dnn_lr", "fusion_cd")


@dataclass
class PipelineConfig:
    # corpora: either all three paths, or synthetic generation
    dev_path: str = ""
    train_path: str = ""
    test_path: str = ""
    synth_n_languages: int = 10
    synth_clusters: str = "1.0:4,1.0:3,1.0:3"
    synth_dim: int = 50
    synth_per_language: int = 200
    synth_test_count: int = 1299
    synth_dev_count: int = 1500
    synth_duration_min: float = 3.0
    synth_duration_max: float = 60.0
    synth_noise_a: float = 0.0
    synth_noise_b: float = 1.0
    synth_cluster_distance: float = 4.0
    synth_oos_fraction: float = 0.23
    synth_oos_languages: int = 3
    seed: int = 1
    # preprocessing
    lda_dim: int = 49
    whiten_eps: float = 1e-8
    # GMM subsystem
    gmm_components: int = 64
    gmm_relevance: float = 16.0
    gmm_covariance: str = DIAGONAL
    gmm_max_iter: int = 200
    gmm_var_floor: float = 1e-4
    # DNN subsystem
    dnn_hidden: str = "600,600"
    dnn_learning_rate: float = 0.05
    dnn_momentum: float = 0.9
    dnn_batch_size: int = 128
    dnn_epochs: int = 100
    dnn_l2: float = 1e-5
    dnn_patience: int = 10
    dnn_validation_fraction: float = 0.1
    dnn_folds: int = 5
    # score/duration densities
    density_c_max: int = 16
    density_relevance: float = 16.0
    density_min_pairs: int = 10
    # decisions and cost
    threshold_grid: int = 512
    cost_n: int = 0  # 0: number of training languages
    cost_p_oos: float = 0.23
    cost_scale: float = 100.0
    format_version: int = 1

    @classmethod
    def from_file(cls, path, overrides=None):
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           comment_prefixes=("#",), inline_comment_prefixes=None)
        parser.optionxform = str
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[config]\n" + fh.read())
        values = dict(parser["config"])
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise DomainError(f"unknown configuration key {key!r}")
            ftype = fields[key].type
            caster = {"int": int, "float": float, "str": str}.get(ftype if isinstance(ftype, str)
                                                                   else ftype.__name__, str)
            try:
                kwargs[key] = caster(raw) if isinstance(raw, str) else raw
            except ValueError:
                raise DomainError(f"configuration key {key!r}: cannot parse {raw!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.format_version != 1:
            raise DomainError(f"unsupported config format_version {self.format_version}")
        paths = [self.dev_path, self.train_path, self.test_path]
        if any(paths) and not all(paths):
            raise DomainError("dev_path, train_path and test_path must be given together")
        if self.lda_dim < 1 or self.gmm_components < 1 or self.density_c_max < 1:
            raise DomainError("lda_dim, gmm_components and density_c_max must be positive")
        if self.dnn_folds < 2:
            raise DomainError("dnn_folds must be >= 2")
        if self.gmm_relevance < 0 or self.density_relevance < 0:
            raise DomainError("relevance factors must be non-negative")
        if not 0 <= self.cost_p_oos <= 1:
            raise DomainError("cost_p_oos must lie in [0, 1]")

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    def synth_spec(self):
        clusters = []
        for item in self.synth_clusters.split(","):
            spread, _, count = item.partition(":")
            clusters.append((float(spread), int(count)))
        return SynthSpec(
            n_languages=self.synth_n_languages, clusters=tuple(clusters), dim=self.synth_dim,
            per_language_count=self.synth_per_language,
            duration_range_s=(self.synth_duration_min, self.synth_duration_max),
            noise_a=self.synth_noise_a, noise_b=self.synth_noise_b, seed=self.seed,
            cluster_distance=self.synth_cluster_distance, dev_count=self.synth_dev_count,
            test_count=self.synth_test_count, oos_fraction=self.synth_oos_fraction,
            n_oos_languages=self.synth_oos_languages)

    def train_config(self):
        return TrainConfig(self.dnn_learning_rate, self.dnn_momentum, self.dnn_batch_size, self.dnn_epochs,
                           self.dnn_l2, self.seed, self.dnn_patience, self.dnn_validation_fraction)

    def hidden_layers(self):
        return [int(h) for h in self.dnn_hidden.split(",") if h.strip()]


def load_corpora(cfg):
    if cfg.dev_path:
        return tuple(data_io.parse_ivector_file(p) for p in (cfg.dev_path, cfg.train_path, cfg.test_path))
    return generate_synthetic_corpus(cfg.synth_spec())


def fit_preprocessor(cfg, dev, train):
    k = min(cfg.lda_dim, len(train.languages) - 1, train.dim)
    return IVectorPreprocessor(n_components=k, eps=cfg.whiten_eps).fit(
        train.vectors, train.labels, X_dev=dev.vectors)


def cross_fitted_dnn(cfg, train):
    """Network scores for each training vector from a model that never saw it."""
    dims = [train.dim, *cfg.hidden_layers(), len(train.languages)]
    tcfg = cfg.train_config()
    scores = np.empty((len(train), len(train.languages)))
    folds = StratifiedKFold(n_splits=cfg.dnn_folds, shuffle=True, random_state=cfg.seed)
    labels = np.asarray(train.labels, dtype=object)
    for k, (fit_idx, held_idx) in enumerate(folds.split(train.vectors, labels)):
        net = init_dnn(dims, seed=cfg.seed + 1 + k, languages=train.languages)
        net = train_dnn(net, train.vectors[fit_idx], labels[fit_idx],
                        dataclasses.replace(tcfg, seed=cfg.seed + 1 + k))
        scores[held_idx] = score_dnn(net, train.subset(held_idx)).scores
    return TrialScoreMatrix(train.ids, train.durations, train.languages, scores, kind="dnn")


@dataclass
class SystemResult:
    name: str
    train_scores: TrialScoreMatrix
    test_scores: TrialScoreMatrix
    threshold: float = None
    decisions: dict = None
    cost: float = None
    eer: float = None


def _evaluate(result, train_labels, test_labels, params, grid_size):
    tune_matrix, tune_labels = with_pseudo_out_of_set(result.train_scores, train_labels)
    policy = tune_threshold(tune_matrix, tune_labels, params, grid_size)
    result.threshold = policy.threshold
    result.decisions = decide(result.test_scores, policy)
    if all(lab is not None for lab in test_labels):
        truth = dict(zip(result.test_scores.ids, test_labels))
        result.cost = compute_cost(result.decisions, truth, params)
        result.eer = equal_error_rate(det_points_matrix(result.test_scores, test_labels))
    return result


def run_pipeline(cfg, out_dir=None):
    """Run every system; returns ``{name: SystemResult}`` and writes artifacts into ``out_dir``."""
    dev, train, test = load_corpora(cfg)
    if any(lab is None for lab in train.labels):
        raise DomainError("training corpus must be labeled")
    languages = train.languages
    params = CostParams(n=cfg.cost_n or len(languages), p_oos=cfg.cost_p_oos, scale=cfg.cost_scale)
    train_labels = list(train.labels)
    test_labels = [None if lab is None else (lab if lab in languages else OUT_OF_SET) for lab in test.labels]

    pre = fit_preprocessor(cfg, dev, train)
    dev_n, train_n, test_n = (preprocess_corpus(pre, c, lda=False) for c in (dev, train, test))
    dev_l, train_l, test_l = (preprocess_corpus(pre, c) for c in (dev, train, test))

    results = {}
    cosine = train_cosine(train_n)
    results["baseline"] = SystemResult("baseline", loo_cosine_matrix(cosine, train_n),
                                       score_cosine_corpus(cosine, test_n))

    lms = train_language_models(dev_l, train_l, n_components=cfg.gmm_components,
                                relevance=cfg.gmm_relevance, covariance_kind=cfg.gmm_covariance,
                                max_iter=cfg.gmm_max_iter, var_floor=cfg.gmm_var_floor, seed=cfg.seed)
    results["gmm"] = SystemResult("gmm", loo_score_matrix(lms, train_l), score_gmm(lms, test_l))

    dims = [train_l.dim, *cfg.hidden_layers(), len(languages)]
    net = train_dnn(init_dnn(dims, seed=cfg.seed, languages=languages), train_l.vectors,
                    train_l.labels, cfg.train_config())
    results["dnn"] = SystemResult("dnn", cross_fitted_dnn(cfg, train_l), score_dnn(net, test_l))

    ab = train_fusion([results["gmm"].train_scores, results["dnn"].train_scores], train_labels)
    results["fusion_ab"] = SystemResult(
        "fusion_ab", ab.apply([results["gmm"].train_scores, results["dnn"].train_scores]),
        ab.apply([results["gmm"].test_scores, results["dnn"].test_scores]))

    densities = {}
    for raw, name in (("gmm", "gmm_lr"), ("dnn", "dnn_lr")):
        tar, non = pairs_from_matrix(results[raw].train_scores, train_labels)
        dm = fit_density_model(tar, non, languages, c_max=cfg.density_c_max, relevance=cfg.density_relevance,
                               min_pairs=cfg.density_min_pairs, source=raw, seed=cfg.seed)
        densities[raw] = dm
        results[name] = SystemResult(name, transform_scores(dm, results[raw].train_scores),
                                     transform_scores(dm, results[raw].test_scores))

    cd = train_fusion([results["gmm_lr"].train_scores, results["dnn_lr"].train_scores], train_labels)
    results["fusion_cd"] = SystemResult(
        "fusion_cd", cd.apply([results["gmm_lr"].train_scores, results["dnn_lr"].train_scores]),
        cd.apply([results["gmm_lr"].test_scores, results["dnn_lr"].test_scores]))

    for name in SYSTEMS:
        _evaluate(results[name], train_labels, test_labels, params, cfg.threshold_grid)

    if out_dir is not None:
        _write_outputs(out_dir, cfg, results, test_labels, pre, cosine, lms, net, densities, ab, cd)
    return results


def summary_line(results):
    parts = []
    for name in SYSTEMS:
        r = results[name]
        if r.cost is not None:
            parts.append(f"cost_{name}={r.cost:.3f}")
    for name in SYSTEMS:
        r = results[name]
        if r.eer is not None:
            parts.append(f"eer_{name}={r.eer:.4f}")
    return " ".join(parts)


def _write_outputs(out_dir, cfg, results, test_labels, pre, cosine, lms, net, densities, ab, cd):
    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)
    with open(join("config.used"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    data_io.save_model(pre.to_dict(), "preprocess", join("preprocess.model.json"))
    data_io.save_model(cosine.to_dict(), "cosine", join("baseline.model.json"))
    data_io.save_model(lms.to_dict(), "language_models", join("gmm.model.json"))
    data_io.save_model(net.to_dict(), "dnn", join("dnn.model.json"))
    for raw, dm in densities.items():
        data_io.save_model(dm.to_dict(), "density", join(f"density_{raw}.model.json"))
    data_io.save_model(ab.to_dict(), "fusion", join("fusion_ab.model.json"))
    data_io.save_model(cd.to_dict(), "fusion", join("fusion_cd.model.json"))
    lines = []
    for name in SYSTEMS:
        r = results[name]
        data_io.write_score_file(r.test_scores, join(f"{name}.scores"))
        data_io.write_decision_file(r.decisions, join(f"{name}.decisions"))
        lines.append(f"system={name} threshold={r.threshold!r} cost={r.cost!r} eer={r.eer!r}\n")
    for name in ("gmm", "gmm_lr", "fusion_cd"):
        r = results[name]
        if r.eer is not None:
            data_io.write_det_file(det_points_matrix(r.test_scores, test_labels), join(f"{name}.det"))
    with open(join("results.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(lines))

