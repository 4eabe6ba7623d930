"""Open-set language recognition back end over i-vectors.

Cosine baseline, GMM-UBM and feed-forward network subsystems, score/duration
likelihood-ratio calibration, linear fusion and a thresholded open-set
decision evaluated with an averaged per-class error cost.
"""

from .baseline import CosineScorer, score_cosine, train_cosine
from .data_io import (Corpus, IVectorRecord, TrialScoreMatrix, load_model, parse_ivector_file,
                      parse_score_file, save_model, write_ivector_file, write_score_file)
from .dnn import DNNClassifier, TrainConfig, init_dnn, train_dnn
from .duration_fusion import DurationLRCalibrator, fit_density_model, transform_scores
from .errors import (DimensionError, DivergenceError, DomainError, IvlidError, NumericError,
                     ParseError)
from .fusion_eval import (CostParams, LinearFusion, compute_cost, decide, det_points, equal_error_rate,
                          train_fusion, tune_threshold)
from .gmm import GaussianMixtureEM, GmmModel, fit_gmm_em, map_adapt
from .mml import fit_gmm_mml
from .pipeline import PipelineConfig, run_pipeline
from .preprocess import IVectorPreprocessor
from .subsystem_gmm import GMMLanguageScorer, loo_scores, score_gmm, train_language_models
from .synth import SynthSpec, generate_synthetic_corpus

__version__ = "0.1.0"
