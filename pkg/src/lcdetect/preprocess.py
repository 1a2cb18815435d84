"""Training-fold-only transformations: Tukey-fence outlier bounds, imputation
(median/mean/mode/kNN), zero-mean unit-sd scaling, and random undersampling.

Every fitted statistic is a pure function of the fitting partition; apply
steps never refit, so validation and test folds see the training-fold
parameters only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import BINARY_FEATURES, CONTINUOUS_FEATURES, FEATURES, Cohort


def iqr_bounds(values) -> tuple[float, float]:
    """Tukey fences (Q1 - 1.5*IQR, Q3 + 1.5*IQR), linear-interpolated quartiles."""
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size < 4:
        raise ValueError(f"iqr_bounds needs at least 4 finite values, got {arr.size}")
    q1, q3 = np.percentile(arr, [25, 75], method="linear")
    iqr = q3 - q1
    return float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr)


def feature_bounds(X: np.ndarray, feature_names=None) -> dict:
    """Per-feature fences for the continuous columns of X."""
    names = list(feature_names) if feature_names is not None else list(FEATURES)
    out = {}
    for j, name in enumerate(names):
        if name in BINARY_FEATURES:
            continue
        out[name] = iqr_bounds(X[:, j])
    return out


def remove_outliers(cohort: Cohort, bounds: dict, features=None) -> tuple[Cohort, int]:
    """Drop records with any non-missing continuous value strictly outside
    its bounds; returns (kept cohort, removed count)."""
    names = list(features) if features is not None else list(CONTINUOUS_FEATURES)
    missing = [f for f in names if f not in bounds]
    if missing:
        raise ValueError(f"bounds missing for continuous feature(s) {missing}")
    X = cohort.feature_matrix()
    keep = np.ones(len(cohort), dtype=bool)
    for name in names:
        j = FEATURES.index(name)
        lo, hi = bounds[name]
        col = X[:, j]
        observed = ~np.isnan(col)
        bad = observed & ((col < lo) | (col > hi))
        keep &= ~bad
    kept = cohort.subset(np.flatnonzero(keep))
    return kept, int((~keep).sum())


_STRATEGIES = ("median", "mean", "mode", "knn")


@dataclass
class ImputerState:
    strategy: str
    fill_values: np.ndarray | None = None  # median/mean/mode
    reference: np.ndarray | None = None  # knn: complete fitting rows
    k: int = 0

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "fill_values": None if self.fill_values is None else self.fill_values.tolist(),
            "reference": None if self.reference is None else self.reference.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ImputerState":
        return cls(
            strategy=data["strategy"],
            fill_values=None if data["fill_values"] is None else np.asarray(data["fill_values"]),
            reference=None if data["reference"] is None else np.asarray(data["reference"]),
            k=int(data["k"]),
        )


def fit_imputer(matrix, strategy: str = "median", k: int = 5) -> ImputerState:
    X = np.asarray(matrix, dtype=float)
    if strategy not in _STRATEGIES:
        raise ValueError(f"unknown imputation strategy {strategy!r}")
    observed = ~np.isnan(X)
    empty = np.flatnonzero(observed.sum(axis=0) == 0)
    if empty.size:
        raise ValueError(f"feature column(s) {empty.tolist()} have no observed values")
    if strategy == "knn":
        complete = X[observed.all(axis=1)]
        if len(complete) < k:
            raise ValueError(f"knn imputer needs >= k={k} complete rows, found {len(complete)}")
        return ImputerState(strategy="knn", reference=complete.copy(), k=k)
    if strategy == "median":
        fills = np.nanmedian(X, axis=0)
    elif strategy == "mean":
        fills = np.nanmean(X, axis=0)
    else:  # mode: most frequent observed value, smallest on ties
        fills = np.empty(X.shape[1])
        for j in range(X.shape[1]):
            col = X[observed[:, j], j]
            values, counts = np.unique(col, return_counts=True)
            fills[j] = values[np.argmax(counts)]
    return ImputerState(strategy=strategy, fill_values=fills)


def apply_imputer(state: ImputerState, matrix) -> np.ndarray:
    """Fill missing cells only; observed cells pass through untouched."""
    X = np.asarray(matrix, dtype=float).copy()
    missing = np.isnan(X)
    if not missing.any():
        return X
    if state.strategy != "knn":
        X[missing] = np.broadcast_to(state.fill_values, X.shape)[missing]
        return X
    ref = state.reference
    for i in np.flatnonzero(missing.any(axis=1)):
        row = X[i]
        obs = ~np.isnan(row)
        # Euclidean distance over the row's observed features; reference rows
        # are complete, so these are the mutually observed coordinates.
        diffs = ref[:, obs] - row[obs]
        dist = np.sqrt((diffs**2).sum(axis=1))
        nearest = np.argsort(dist, kind="stable")[: state.k]
        fills = ref[nearest].mean(axis=0)
        row[~obs] = fills[~obs]
    return X


@dataclass
class ScalerState:
    mean: np.ndarray
    std: np.ndarray
    scaled_columns: np.ndarray  # bool mask; binary indicator columns pass through

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "scaled_columns": self.scaled_columns.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScalerState":
        return cls(
            mean=np.asarray(data["mean"]),
            std=np.asarray(data["std"]),
            scaled_columns=np.asarray(data["scaled_columns"], dtype=bool),
        )


def fit_scaler(matrix, feature_names=None, skip_binary: bool = True) -> ScalerState:
    """Population mean/sd per column; constant columns are rejected by name."""
    X = np.asarray(matrix, dtype=float)
    if np.isnan(X).any():
        raise ValueError("scaler requires a complete matrix; impute first")
    names = list(feature_names) if feature_names is not None else [str(j) for j in range(X.shape[1])]
    scaled = np.array([not (skip_binary and n in BINARY_FEATURES) for n in names])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j in np.flatnonzero(scaled):
        if std[j] == 0.0:
            raise ValueError(f"feature {names[j]!r} is constant; cannot scale")
    return ScalerState(mean=mean, std=std, scaled_columns=scaled)


def apply_scaler(state: ScalerState, matrix) -> np.ndarray:
    X = np.asarray(matrix, dtype=float).copy()
    cols = state.scaled_columns
    X[:, cols] = (X[:, cols] - state.mean[cols]) / state.std[cols]
    return X


def random_undersample(X, y, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Drop majority rows at random (without replacement) until both classes
    have the minority count; minority rows are all kept, original row order
    is preserved."""
    X = np.asarray(X)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("undersampling requires both classes present")
    target = counts.min()
    rng = np.random.default_rng(seed)
    keep = []
    for cls, cnt in zip(classes, counts):
        idx = np.flatnonzero(y == cls)
        if cnt > target:
            idx = rng.choice(idx, size=target, replace=False)
        keep.append(idx)
    keep = np.sort(np.concatenate(keep))
    return X[keep], y[keep]


@dataclass
class FittedPreprocessor:
    """Frozen column transforms learned on a training fold (impute + scale).

    Row-level steps (outlier removal, undersampling) apply to the training
    fold only and are performed by fit_preprocessor; transform() is the pure
    column mapping reused on validation/test partitions.
    """

    bounds: dict
    imputer: ImputerState
    scaler: ScalerState
    feature_names: list = field(default_factory=lambda: list(FEATURES))

    def transform(self, matrix) -> np.ndarray:
        return apply_scaler(self.scaler, apply_imputer(self.imputer, matrix))

    def to_dict(self) -> dict:
        return {
            "bounds": {k: [float(a), float(b)] for k, (a, b) in self.bounds.items()},
            "imputer": self.imputer.to_dict(),
            "scaler": self.scaler.to_dict(),
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedPreprocessor":
        return cls(
            bounds={k: (v[0], v[1]) for k, v in data["bounds"].items()},
            imputer=ImputerState.from_dict(data["imputer"]),
            scaler=ScalerState.from_dict(data["scaler"]),
            feature_names=list(data["feature_names"]),
        )


def fit_preprocessor(
    train: Cohort,
    impute_strategy: str = "median",
    balance: bool = True,
    knn_k: int = 5,
    seed: int = 0,
    feature_subset=None,
) -> tuple[FittedPreprocessor, np.ndarray, np.ndarray, int]:
    """Run the training-fold pipeline: outlier removal -> undersample ->
    impute -> scale. Returns (preprocessor, X_train, y_train, removed).

    feature_subset optionally restricts the matrix to the named features
    (used by ablation runs); transforms and fences are fitted on that subset.
    """
    names = list(FEATURES) if feature_subset is None else list(feature_subset)
    continuous = [n for n in names if n not in BINARY_FEATURES]
    full = train.feature_matrix()
    bounds = {n: iqr_bounds(full[:, FEATURES.index(n)]) for n in continuous}
    kept, removed = remove_outliers(train, bounds, features=continuous)

    cols = [FEATURES.index(n) for n in names]
    X = kept.feature_matrix()[:, cols]
    y = kept.labels()

    if balance:
        X, y = random_undersample(X, y, seed=seed)

    imputer = fit_imputer(X, strategy=impute_strategy, k=knn_k)
    X = apply_imputer(imputer, X)
    scaler = fit_scaler(X, feature_names=names)
    X = apply_scaler(scaler, X)

    pre = FittedPreprocessor(bounds=bounds, imputer=imputer, scaler=scaler, feature_names=names)
    return pre, X, y, removed


def cohort_matrix(cohort: Cohort, feature_subset=None) -> np.ndarray:
    names = list(FEATURES) if feature_subset is None else list(feature_subset)
    cols = [FEATURES.index(n) for n in names]
    return cohort.feature_matrix()[:, cols]


__all__ = [
    "iqr_bounds",
    "feature_bounds",
    "remove_outliers",
    "ImputerState",
    "fit_imputer",
    "apply_imputer",
    "ScalerState",
    "fit_scaler",
    "apply_scaler",
    "random_undersample",
    "FittedPreprocessor",
    "fit_preprocessor",
    "cohort_matrix",
]
