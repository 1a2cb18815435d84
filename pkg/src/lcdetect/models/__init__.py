"""The four base classifiers behind one probability interface."""

from .base import ClassifierModel, dumps_model, load_model, loads_model, save_model, sigmoid
from .gbdt import DepthwiseGbdtModel, GbdtModel, LeafwiseGbdtModel, logistic_loss, train_gbdt
from .linear import (
    LinearSvmModel,
    LogisticModel,
    fit_platt,
    logistic_objective,
    train_linear_svm,
    train_logistic,
)
from .tuning import ParamGrid, ParamRange, tune

# Pool order used for deterministic tie-breaking in the ensemble.
POOL_ORDER = ["gbdt_leafwise", "gbdt_depthwise", "logistic", "linear_svm"]

# Tuned defaults for the four base learners.
DEFAULT_HYPERPARAMETERS = {
    "gbdt_leafwise": {
        "growth": "leafwise",
        "eta": 0.1,
        "max_depth": 1,
        "min_data_in_leaf": 17,
        "min_gain_to_split": 0.0,
        "n_estimators": 210,
        "num_leaves": 550,
    },
    "gbdt_depthwise": {
        "growth": "depthwise",
        "eta": 0.02,
        "max_depth": 3,
        "min_child_weight": 8,
        "n_estimators": 765,
    },
    "logistic": {"C": 0.3, "max_iter": 1000, "tol": 1e-8},
    "linear_svm": {"C": 49.1},
}


def train_model(kind: str, X, y, params: dict | None = None, seed: int = 0) -> ClassifierModel:
    """Train one of the four base learners by kind name."""
    merged = dict(DEFAULT_HYPERPARAMETERS[kind])
    merged.update(params or {})
    if kind == "logistic":
        return train_logistic(X, y, seed=seed, **merged)
    if kind == "linear_svm":
        return train_linear_svm(X, y, seed=seed, **merged)
    if kind in ("gbdt_depthwise", "gbdt_leafwise"):
        return train_gbdt(X, y, seed=seed, **merged)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "ClassifierModel",
    "LogisticModel",
    "LinearSvmModel",
    "GbdtModel",
    "DepthwiseGbdtModel",
    "LeafwiseGbdtModel",
    "ParamGrid",
    "ParamRange",
    "POOL_ORDER",
    "DEFAULT_HYPERPARAMETERS",
    "dumps_model",
    "loads_model",
    "save_model",
    "load_model",
    "sigmoid",
    "logistic_loss",
    "logistic_objective",
    "fit_platt",
    "train_logistic",
    "train_linear_svm",
    "train_gbdt",
    "train_model",
    "tune",
]
