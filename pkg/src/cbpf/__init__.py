"""Correlation-based context pre-filtering for rating prediction."""

from .dataset import Dataset, DatasetSchema, ContextFactorSpec, load_dataset, dataset_stats, binarize_situation
from .influence import InfluenceMode, condition_influence_vector, influence_matrix
from .context import situation_representation, situation_similarity, enumerate_situations
from .prefilter import PrefilterConfig, build_local_dataset
from .recommender import MfHyperparams, MfModel, train_mf, predict, baseline_predict
from .systems import SystemConfig
from .evaluation import make_folds, run_experiment, mae, rmse, wilcoxon_signed_rank

__all__ = [
    "Dataset", "DatasetSchema", "ContextFactorSpec", "load_dataset", "dataset_stats", "binarize_situation",
    "InfluenceMode", "condition_influence_vector", "influence_matrix",
    "situation_representation", "situation_similarity", "enumerate_situations",
    "PrefilterConfig", "build_local_dataset",
    "MfHyperparams", "MfModel", "train_mf", "predict", "baseline_predict",
    "SystemConfig", "make_folds", "run_experiment", "mae", "rmse", "wilcoxon_signed_rank",
]
