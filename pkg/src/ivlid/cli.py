"""Command-line front end: ``ivlid <subcommand> ...``.

Every subcommand prints one ``key=value`` summary line on success.  Options
that correspond to configuration keys can also come from a flat
``key=value`` file passed with ``--config``; an explicit flag always wins
over the file, and the file wins over built-in defaults.

Exit codes: 0 success, 1 error raised by a pipeline module (message is
prefixed with the module name), 2 usage error.
"""

import argparse
import dataclasses
import logging
import os
import sys
import traceback

from . import data_io
from .baseline import CosineModel, loo_cosine_matrix, score_cosine_corpus, train_cosine
from .data_io import OUT_OF_SET, pairs_from_matrix
from .dnn import DnnModel, init_dnn, score_dnn, train_dnn
from .duration_fusion import ScoreDurationDensityModel, fit_density_model, transform_scores
from .errors import IvlidError
from .fusion_eval import (CostParams, DecisionPolicy, FusionModel, compute_cost, decide, det_points_matrix,
                          equal_error_rate, train_fusion, tune_threshold, with_pseudo_out_of_set)
from .pipeline import PipelineConfig, cross_fitted_dnn, fit_preprocessor, run_pipeline, summary_line
from .preprocess import IVectorPreprocessor, preprocess_corpus
from .subsystem_gmm import LanguageModelSet, loo_score_matrix, score_gmm, train_language_models
from .synth import generate_synthetic_corpus

logger = logging.getLogger("ivlid")

# source file -> module name used in error messages
_MODULE_OF_FILE = {
    "data_io": "data_io", "synth": "data_io", "preprocess": "preprocess", "baseline": "baseline_cosine",
    "gmm": "gmm_core", "mml": "gmm_core", "subsystem_gmm": "subsystem_gmm", "dnn": "subsystem_dnn",
    "duration_fusion": "duration_fusion", "fusion_eval": "fusion_eval", "pipeline": "cli", "cli": "cli",
}


class UsageError(Exception):
    pass


def _summary(**items):
    print(" ".join(f"{k}={v}" for k, v in items.items()))


def _fmt(x):
    return f"{x:.10g}"


def _config(args):
    """PipelineConfig from ``--config`` plus every flag that names a configuration key."""
    keys = {f.name for f in dataclasses.fields(PipelineConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "config", None):
        return PipelineConfig.from_file(args.config, overrides)
    return PipelineConfig.from_mapping(overrides)


def _truth(path):
    return data_io.parse_decision_file(path)


def _labels_for(matrix, truth):
    missing = [rid for rid in matrix.ids if rid not in truth]
    if missing:
        raise data_io.DomainError(f"no truth label for {len(missing)} scored id(s), e.g. {missing[0]!r}")
    return [truth[rid] if truth[rid] in matrix.languages else OUT_OF_SET for rid in matrix.ids]


def _cost_params(cfg, n_languages):
    return CostParams(n=cfg.cost_n or n_languages, p_oos=cfg.cost_p_oos, scale=cfg.cost_scale)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = _config(args)
    dev, train, test = generate_synthetic_corpus(cfg.synth_spec())
    os.makedirs(args.out, exist_ok=True)
    for name, corpus in (("dev", dev), ("train", train), ("test", test)):
        data_io.write_ivector_file(corpus, os.path.join(args.out, f"{name}.ivec"))
    data_io.write_decision_file(dict(zip(train.ids, train.labels)), os.path.join(args.out, "train.truth"))
    data_io.write_decision_file(dict(zip(test.ids, test.labels)), os.path.join(args.out, "test.truth"))
    _summary(dev=len(dev), train=len(train), test=len(test), dim=train.dim, languages=len(train.languages),
             seed=cfg.seed)


def cmd_preprocess_fit(args):
    cfg = _config(args)
    dev = data_io.parse_ivector_file(args.dev)
    train = data_io.parse_ivector_file(args.train)
    pre = fit_preprocessor(cfg, dev, train)
    data_io.save_model(pre.to_dict(), "preprocess", args.out)
    _summary(dim=train.dim, lda_dim=pre.n_components, languages=len(train.languages))


def cmd_preprocess_apply(args):
    _, payload = data_io.load_model(args.model, "preprocess")
    pre = IVectorPreprocessor.from_dict(payload)
    corpus = data_io.parse_ivector_file(args.input)
    out = preprocess_corpus(pre, corpus, lda=not args.no_lda)
    data_io.write_ivector_file(out, args.out)
    _summary(records=len(out), dim=out.dim, lda=str(not args.no_lda).lower())


def cmd_baseline_train(args):
    train = data_io.parse_ivector_file(args.train)
    model = train_cosine(train)
    data_io.save_model(model.to_dict(), "cosine", args.out)
    _summary(languages=len(model.languages), dim=train.dim)


def cmd_baseline_score(args):
    _, payload = data_io.load_model(args.model, "cosine")
    matrix = score_cosine_corpus(CosineModel.from_dict(payload), data_io.parse_ivector_file(args.input))
    data_io.write_score_file(matrix, args.out)
    _summary(segments=len(matrix), languages=len(matrix.languages), kind=matrix.kind)


def cmd_gmm_train(args):
    cfg = _config(args)
    dev = data_io.parse_ivector_file(args.dev)
    train = data_io.parse_ivector_file(args.train)
    models = train_language_models(dev, train, n_components=cfg.gmm_components, relevance=cfg.gmm_relevance,
                                   covariance_kind=cfg.gmm_covariance, max_iter=cfg.gmm_max_iter,
                                   var_floor=cfg.gmm_var_floor, seed=cfg.seed)
    data_io.save_model(models.to_dict(), "language_models", args.out)
    _summary(components=models.ubm.n_components, languages=len(models.languages), dim=models.ubm.dim)


def cmd_gmm_score(args):
    _, payload = data_io.load_model(args.model, "language_models")
    matrix = score_gmm(LanguageModelSet.from_dict(payload), data_io.parse_ivector_file(args.input))
    data_io.write_score_file(matrix, args.out)
    _summary(segments=len(matrix), languages=len(matrix.languages), kind=matrix.kind)


def cmd_dnn_train(args):
    cfg = _config(args)
    train = data_io.parse_ivector_file(args.train)
    dims = [train.dim, *cfg.hidden_layers(), len(train.languages)]
    net = train_dnn(init_dnn(dims, seed=cfg.seed, languages=train.languages), train.vectors, train.labels,
                    cfg.train_config())
    data_io.save_model(net.to_dict(), "dnn", args.out)
    _summary(layers="-".join(str(d) for d in net.layer_dims), languages=len(net.languages))


def cmd_dnn_score(args):
    _, payload = data_io.load_model(args.model, "dnn")
    matrix = score_dnn(DnnModel.from_dict(payload), data_io.parse_ivector_file(args.input))
    data_io.write_score_file(matrix, args.out)
    _summary(segments=len(matrix), languages=len(matrix.languages), kind=matrix.kind)


def cmd_loo(args):
    cfg = _config(args)
    train = data_io.parse_ivector_file(args.train)
    if args.system == "gmm":
        _, payload = data_io.load_model(args.model, "language_models")
        matrix = loo_score_matrix(LanguageModelSet.from_dict(payload), train)
    elif args.system == "cosine":
        _, payload = data_io.load_model(args.model, "cosine")
        matrix = loo_cosine_matrix(CosineModel.from_dict(payload), train)
    else:
        matrix = cross_fitted_dnn(cfg, train)
    tar, non = pairs_from_matrix(matrix, train.labels)
    data_io.write_pair_file(tar, non, args.out)
    if args.scores_out:
        data_io.write_score_file(matrix, args.scores_out)
    _summary(system=args.system, targets=len(tar), nontargets=len(non))


def cmd_fusion_fit_density(args):
    cfg = _config(args)
    tar, non = data_io.parse_pair_file(args.pairs)
    languages = sorted(set(tar.languages) | set(non.languages))
    model = fit_density_model(tar, non, languages, c_max=cfg.density_c_max, relevance=cfg.density_relevance,
                              min_pairs=cfg.density_min_pairs, source=args.source, seed=cfg.seed,
                              per_language=not args.universal)
    data_io.save_model(model.to_dict(), "density", args.out)
    _summary(target_components=model.universal_target.n_components,
             nontarget_components=model.universal_nontarget.n_components,
             adapted_languages=len(model.per_language_target), fallback=len(model.fallback_languages))


def cmd_fusion_transform(args):
    _, payload = data_io.load_model(args.model, "density")
    model = ScoreDurationDensityModel.from_dict(payload)
    raw = data_io.parse_score_file(args.scores)
    out = transform_scores(model, raw, per_language=not args.universal)
    data_io.write_score_file(out, args.out)
    _summary(segments=len(out), languages=len(out.languages), kind=out.kind)


def cmd_fuse_train(args):
    matrices = [data_io.parse_score_file(p) for p in args.scores]
    labels = _labels_for(matrices[0], _truth(args.truth))
    model = train_fusion(matrices, labels, use_duration=not args.no_duration)
    data_io.save_model(model.to_dict(), "fusion", args.out)
    _summary(weights=",".join(_fmt(w) for w in model.weights), quality_weight=_fmt(model.quality_weight),
             offset=_fmt(model.offset))


def cmd_fuse_apply(args):
    _, payload = data_io.load_model(args.model, "fusion")
    fused = FusionModel.from_dict(payload).apply([data_io.parse_score_file(p) for p in args.scores])
    data_io.write_score_file(fused, args.out)
    _summary(segments=len(fused), languages=len(fused.languages), kind=fused.kind)


def cmd_decide(args):
    cfg = _config(args)
    matrix = data_io.parse_score_file(args.scores)
    if args.threshold is not None:
        policy = DecisionPolicy(args.threshold)
    elif args.policy:
        policy = DecisionPolicy.from_dict(data_io.load_model(args.policy, "decision_policy")[1])
    else:
        if not (args.tune_scores and args.tune_truth):
            raise UsageError("decide needs --threshold, --policy, or --tune-scores with --tune-truth")
        tune = data_io.parse_score_file(args.tune_scores)
        labels = _labels_for(tune, _truth(args.tune_truth))
        if OUT_OF_SET not in labels:
            tune, labels = with_pseudo_out_of_set(tune, labels)
        policy = tune_threshold(tune, labels, _cost_params(cfg, len(tune.languages)), cfg.threshold_grid)
    if args.policy_out:
        data_io.save_model(policy.to_dict(), "decision_policy", args.policy_out)
    decisions = decide(matrix, policy)
    data_io.write_decision_file(decisions, args.out)
    n_oos = sum(1 for v in decisions.values() if v == policy.out_of_set_label)
    _summary(threshold=repr(policy.threshold), segments=len(decisions), out_of_set=n_oos)


def cmd_evaluate(args):
    cfg = _config(args)
    decisions = data_io.parse_decision_file(args.decisions)
    truth = _truth(args.truth)
    n = cfg.cost_n or len({v for v in truth.values() if v != OUT_OF_SET})
    cost = compute_cost(decisions, truth, CostParams(n=n, p_oos=cfg.cost_p_oos, scale=cfg.cost_scale))
    _summary(cost=_fmt(cost), segments=len(decisions), n=n)


def cmd_det(args):
    matrix = data_io.parse_score_file(args.scores)
    points = det_points_matrix(matrix, _labels_for(matrix, _truth(args.truth)))
    data_io.write_det_file(points, args.out)
    _summary(points=len(points), eer=_fmt(equal_error_rate(points)))


def cmd_pipeline(args):
    cfg = _config(args)
    results = run_pipeline(cfg, out_dir=args.out)
    print(summary_line(results))


# ---------------------------------------------------------------------------
# argument parsing


def _config_options(p, *keys):
    """Add ``--config``/``--set`` and one flag per configuration key (dest = key)."""
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    for key in keys:
        t = types[key]
        name = t if isinstance(t, str) else t.__name__
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                       type={"int": int, "float": float}.get(name, str), help=f"configuration key {key}")


_SYNTH_KEYS = ("seed", "synth_n_languages", "synth_clusters", "synth_dim", "synth_per_language",
               "synth_test_count", "synth_dev_count", "synth_duration_min", "synth_duration_max",
               "synth_noise_a", "synth_noise_b", "synth_cluster_distance", "synth_oos_fraction",
               "synth_oos_languages")
_DNN_KEYS = ("seed", "dnn_hidden", "dnn_learning_rate", "dnn_momentum", "dnn_batch_size", "dnn_epochs",
             "dnn_l2", "dnn_patience", "dnn_validation_fraction")
_COST_KEYS = ("cost_n", "cost_p_oos", "cost_scale")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ivlid", description="Open-set language recognition over i-vectors.",
        epilog="Configuration precedence: command-line flag > --set > --config file > built-in default.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="generate a seeded synthetic dev/train/test corpus")
    _config_options(p, *_SYNTH_KEYS)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="fit or apply whitening, length normalization and LDA")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("fit", help="fit the transform on dev (whitening) and train (LDA)")
    _config_options(q, "lda_dim", "whiten_eps")
    q.add_argument("--dev", required=True)
    q.add_argument("--train", required=True)
    q.add_argument("--out", required=True, help="model file")
    q.set_defaults(func=cmd_preprocess_fit)
    q = ps.add_parser("apply", help="transform an i-vector file")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--no-lda", action="store_true", help="stop after length normalization (baseline input)")
    q.set_defaults(func=cmd_preprocess_apply)

    p = sub.add_parser("baseline", help="cosine baseline")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("train")
    q.add_argument("--train", required=True, help="whitened, normalized training i-vectors")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_baseline_train)
    q = ps.add_parser("score")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True, help="score file")
    q.set_defaults(func=cmd_baseline_score)

    p = sub.add_parser("gmm", help="GMM-UBM subsystem")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("train")
    _config_options(q, "seed", "gmm_components", "gmm_relevance", "gmm_covariance", "gmm_max_iter",
                    "gmm_var_floor")
    q.add_argument("--dev", required=True, help="preprocessed dev i-vectors (UBM)")
    q.add_argument("--train", required=True, help="preprocessed labeled training i-vectors")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_gmm_train)
    q = ps.add_parser("score")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_gmm_score)

    p = sub.add_parser("dnn", help="feed-forward network subsystem")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("train")
    _config_options(q, *_DNN_KEYS)
    q.add_argument("--train", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_dnn_train)
    q = ps.add_parser("score")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_dnn_score)

    p = sub.add_parser("loo", help="leave-one-out (or cross-fitted) training trial scores")
    _config_options(p, *_DNN_KEYS, "dnn_folds")
    p.add_argument("--system", choices=("gmm", "cosine", "dnn"), default="gmm")
    p.add_argument("--model", help="trained model (gmm and cosine)")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True, help="pair file")
    p.add_argument("--scores-out", help="also write the training score matrix")
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("fusion", help="score/duration likelihood-ratio densities")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("fit-density")
    _config_options(q, "seed", "density_c_max", "density_relevance", "density_min_pairs")
    q.add_argument("--pairs", required=True, help="pair file from 'loo'")
    q.add_argument("--source", default="gmm", help="kind of the raw scores the densities describe")
    q.add_argument("--universal", action="store_true", help="skip per-language adaptation")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fusion_fit_density)
    q = ps.add_parser("transform")
    q.add_argument("--model", required=True)
    q.add_argument("--scores", required=True)
    q.add_argument("--universal", action="store_true", help="use the universal pair for every language")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fusion_transform)

    p = sub.add_parser("fuse", help="linear fusion of subsystem score files")
    ps = p.add_subparsers(dest="action", metavar="ACTION")
    ps.required = True
    q = ps.add_parser("train")
    q.add_argument("--scores", nargs="+", required=True, help="aligned training score files")
    q.add_argument("--truth", required=True, help="id<TAB>language file")
    q.add_argument("--no-duration", action="store_true", help="drop the log-duration term")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fuse_train)
    q = ps.add_parser("apply")
    q.add_argument("--model", required=True)
    q.add_argument("--scores", nargs="+", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fuse_apply)

    p = sub.add_parser("decide", help="open-set decisions from a score file")
    _config_options(p, "threshold_grid", *_COST_KEYS)
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, help="fixed threshold")
    p.add_argument("--policy", help="saved decision policy")
    p.add_argument("--tune-scores", help="training score file used to tune the threshold")
    p.add_argument("--tune-truth", help="truth for --tune-scores")
    p.add_argument("--policy-out", help="save the policy that was used")
    p.add_argument("--out", required=True, help="decision file")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("evaluate", help="cost of a decision file against truth")
    _config_options(p, *_COST_KEYS)
    p.add_argument("--decisions", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("det", help="DET points and equal error rate of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_det)

    p = sub.add_parser("pipeline", help="run every system end to end")
    _config_options(p, "seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _module_of(exc):
    frames = [f for f in traceback.extract_tb(exc.__traceback__)
              if os.path.dirname(f.filename) == os.path.dirname(__file__)]
    if not frames:
        return "cli"
    stem = os.path.splitext(os.path.basename(frames[-1].filename))[0]
    return _MODULE_OF_FILE.get(stem, stem)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (IvlidError, ValueError, ArithmeticError) as exc:
        print(f"ivlid: {_module_of(exc)}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ivlid: data_io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
