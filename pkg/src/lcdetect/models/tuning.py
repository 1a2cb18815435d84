"""Two-stage hyperparameter search: randomized exploration followed by a
local grid around the stage-1 winner, scored by mean F1 over 2 stratified
folds. Ties keep the earlier candidate, so the search is deterministic."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..evaluate import confusion, metrics, stratified_kfold


@dataclass(frozen=True)
class ParamRange:
    """Sampling range for the randomized stage; log-uniform when log=True."""

    lo: float
    hi: float
    integer: bool = False
    log: bool = False

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"range [{self.lo}, {self.hi}] is not ordered")

    def sample(self, rng: np.random.Generator):
        if self.log:
            v = float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))
        else:
            v = float(rng.uniform(self.lo, self.hi))
        return int(round(v)) if self.integer else v

    def clip(self, v):
        v = min(max(v, self.lo), self.hi)
        return int(round(v)) if self.integer else v


@dataclass(frozen=True)
class ParamGrid:
    """Explicit candidate list for the grid stage."""

    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("grid must be non-empty")


def _local_grid(spec, winner):
    if isinstance(spec, ParamGrid):
        return list(spec.values)
    # Bracket the stage-1 winner; hyperparameters here are positive scales.
    candidates = {spec.clip(winner * 0.5), spec.clip(winner), spec.clip(winner * 1.5)}
    return sorted(candidates)


def _mean_f1(train_fn, params, X, y, folds, seed):
    scores = []
    for train_idx, val_idx in folds:
        model = train_fn(params, X[train_idx], y[train_idx], seed)
        probs = model.predict_proba(X[val_idx])
        f1 = metrics(confusion(y[val_idx], probs))["f1"]
        scores.append(0.0 if f1 is None else f1)
    return float(np.mean(scores))


def tune(space: dict, X, y, train_fn, n_random: int = 10, folds: int = 2, seed: int = 0) -> dict:
    """Return the best parameter dict found by the two-stage search.

    space maps parameter name -> ParamRange | ParamGrid; train_fn(params, X,
    y, seed) -> fitted model with predict_proba.
    """
    if not space:
        raise ValueError("hyperparameter space is empty")
    if n_random < 1:
        raise ValueError("randomized stage needs a budget of at least 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    cv = stratified_kfold(y, k=folds, seed=seed)

    names = list(space)
    candidates = []
    for _ in range(n_random):
        params = {}
        for name in names:
            spec = space[name]
            if isinstance(spec, ParamGrid):
                params[name] = spec.values[int(rng.integers(len(spec.values)))]
            else:
                params[name] = spec.sample(rng)
        candidates.append(params)

    best_params, best_score = None, -np.inf
    for params in candidates:
        score = _mean_f1(train_fn, params, X, y, cv, seed)
        if score > best_score:
            best_params, best_score = params, score

    axes = [_local_grid(space[name], best_params[name]) for name in names]
    for combo in itertools.product(*axes):
        params = dict(zip(names, combo))
        score = _mean_f1(train_fn, params, X, y, cv, seed)
        if score > best_score:
            best_params, best_score = params, score
    return best_params
