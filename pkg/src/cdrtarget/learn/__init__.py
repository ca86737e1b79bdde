"""Supervised learners, preprocessing and cross-validation protocols."""

from .cv import (CvPredictions, FoldError, LeakageError, SplitPredictions, combined_method,
                 nested_cv, refit_full, single_split, stratified_folds)
from .models import (COMPACT_GRIDS, FAMILIES, PUBLISHED_GRIDS, GridError, ModelSpec,
                     TrainedModel, fit, fit_point)
from .preprocess import FittedRecipe, NonFiniteFeatureError, PreprocessRecipe

__all__ = [
    "CvPredictions", "FoldError", "LeakageError", "SplitPredictions", "combined_method",
    "nested_cv", "refit_full", "single_split", "stratified_folds", "COMPACT_GRIDS", "FAMILIES",
    "PUBLISHED_GRIDS", "GridError", "ModelSpec", "TrainedModel", "fit", "fit_point",
    "FittedRecipe", "NonFiniteFeatureError", "PreprocessRecipe",
]
