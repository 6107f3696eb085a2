"""Balanced-bag ensembles with disagreement uncertainty for imbalanced binary screening."""
from .classifier import ClassifierSpec, TrainConfig, TrainedUnit, forward, predict_proba, train
from .dataset import Dataset, DataSplit, Sample, SplitSpec, generate_synthetic, load_tabular, split_by_user
from .ensemble import (
    EnsembleSuite,
    Prediction,
    ReferralPolicy,
    fuse_majority,
    fuse_probability,
    predict,
    predict_batch,
    train_suite,
    uncertainty,
)
from .errors import AudioError, BalensError, ConfigError, DataError, TrainingDivergedError
from .kernels import BACKEND
from .resampling import BagPlan, TrainingBag, down_sample, make_bags, smote_upsample

__version__ = "0.1.0"
