"""Dynamic ensemble selection: per-query competence of each pool member on
the k nearest region-of-competence (DSEL) samples, and prediction by the
locally selected classifier(s).

Methods:
  OLA      single member with highest local accuracy (fraction of the k
           nearest DSEL rows it labels correctly); ties -> lowest pool index.
  MCB      as OLA, but neighbors are first filtered to those whose pool
           decision profile matches the query's in at least the similarity
           threshold of members; all k are kept when none match.
  APriori  member probabilities for each neighbor's true class, weighted by
           inverse distance; the highest-scoring member predicts.
  KNORA_U  vote of all members weighted by their number of correct neighbors.
  KNORA_E  average over members correct on all k neighbors, relaxing k by one
           until non-empty (whole pool at k = 0).

The selected member's probability (not its hard label) is returned so ROC
and calibration analyses stay meaningful downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import ClassifierModel, load_model, save_model

METHODS = ("OLA", "MCB", "APriori", "KNORA_U", "KNORA_E")

_DISTANCE_FLOOR = 1e-12  # inverse-distance weight guard for coincident points


@dataclass
class DesEnsemble:
    pool: list
    dsel_X: np.ndarray
    dsel_y: np.ndarray
    k: int
    method: str
    mcb_similarity_threshold: float = 0.7
    # Materialized on build: per-member probabilities, hard labels, and
    # correctness bits over the DSEL rows.
    dsel_probs: np.ndarray = field(default=None, repr=False)
    dsel_pred: np.ndarray = field(default=None, repr=False)
    correctness: np.ndarray = field(default=None, repr=False)

    def predict_proba(self, X) -> np.ndarray:
        return des_predict_proba(self, X)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) > threshold).astype(int)


def build_des(
    pool,
    dsel_X,
    dsel_y,
    k: int = 7,
    method: str = "OLA",
    mcb_similarity_threshold: float = 0.7,
) -> DesEnsemble:
    dsel_X = np.asarray(dsel_X, dtype=float)
    dsel_y = np.asarray(dsel_y, dtype=int)
    if method not in METHODS:
        raise ValueError(f"unknown DES method {method!r}; expected one of {METHODS}")
    if len(pool) < 2:
        raise ValueError("DES pool needs at least 2 classifiers")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(dsel_X) == 0:
        raise ValueError("DSEL must be non-empty")
    if k > len(dsel_X):
        raise ValueError(f"k={k} exceeds DSEL size {len(dsel_X)}")
    if len(np.unique(dsel_y)) < 2:
        raise ValueError("DSEL must contain both classes")
    if not (0.0 <= mcb_similarity_threshold <= 1.0):
        raise ValueError("mcb_similarity_threshold must lie in [0,1]")

    probs = np.empty((len(pool), len(dsel_X)))
    for i, member in enumerate(pool):
        if not hasattr(member, "predict_proba"):
            raise ValueError(f"pool member {i} has no predict_proba; is it trained?")
        probs[i] = member.predict_proba(dsel_X)
    pred = (probs > 0.5).astype(int)
    correctness = pred == dsel_y[None, :]

    return DesEnsemble(
        pool=list(pool),
        dsel_X=dsel_X,
        dsel_y=dsel_y,
        k=k,
        method=method,
        mcb_similarity_threshold=mcb_similarity_threshold,
        dsel_probs=probs,
        dsel_pred=pred,
        correctness=correctness,
    )


def _neighbor_indices(ensemble: DesEnsemble, X: np.ndarray) -> np.ndarray:
    """k nearest DSEL rows per query by Euclidean distance; ties at the k-th
    distance resolved toward the lower DSEL row index (stable sort)."""
    d2 = ((X[:, None, :] - ensemble.dsel_X[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, : ensemble.k]


def local_accuracy(ensemble: DesEnsemble, query) -> np.ndarray:
    """Per-member fraction of the query's k nearest DSEL rows classified
    correctly."""
    q = np.asarray(query, dtype=float).reshape(1, -1)
    neighbors = _neighbor_indices(ensemble, q)[0]
    return ensemble.correctness[:, neighbors].mean(axis=1)


def _predict_batch(ensemble: DesEnsemble, X: np.ndarray) -> np.ndarray:
    n_queries = len(X)
    n_pool = len(ensemble.pool)
    neighbors = _neighbor_indices(ensemble, X)
    member_probs = np.empty((n_pool, n_queries))
    for i, member in enumerate(ensemble.pool):
        member_probs[i] = member.predict_proba(X)

    out = np.empty(n_queries)
    method = ensemble.method

    if method == "OLA":
        competence = ensemble.correctness[:, neighbors].mean(axis=2)
        chosen = np.argmax(competence, axis=0)
        out = member_probs[chosen, np.arange(n_queries)]

    elif method == "MCB":
        query_profiles = (member_probs > 0.5).astype(int)  # (pool, queries)
        for qi in range(n_queries):
            nb = neighbors[qi]
            sim = (ensemble.dsel_pred[:, nb] == query_profiles[:, qi : qi + 1]).mean(axis=0)
            kept = nb[sim >= ensemble.mcb_similarity_threshold]
            if kept.size == 0:
                kept = nb
            competence = ensemble.correctness[:, kept].mean(axis=1)
            out[qi] = member_probs[int(np.argmax(competence)), qi]

    elif method == "APriori":
        # probability each member assigns to the neighbor's true class
        prob_true = np.where(
            ensemble.dsel_y[None, :] == 1, ensemble.dsel_probs, 1.0 - ensemble.dsel_probs
        )
        d2 = ((X[:, None, :] - ensemble.dsel_X[None, :, :]) ** 2).sum(axis=2)
        for qi in range(n_queries):
            nb = neighbors[qi]
            w = 1.0 / np.maximum(np.sqrt(d2[qi, nb]), _DISTANCE_FLOOR)
            competence = (prob_true[:, nb] * w[None, :]).sum(axis=1) / w.sum()
            out[qi] = member_probs[int(np.argmax(competence)), qi]

    elif method == "KNORA_U":
        counts = ensemble.correctness[:, neighbors].sum(axis=2).astype(float)  # (pool, queries)
        totals = counts.sum(axis=0)
        for qi in range(n_queries):
            if totals[qi] == 0:
                out[qi] = member_probs[:, qi].mean()
            else:
                out[qi] = (counts[:, qi] * member_probs[:, qi]).sum() / totals[qi]

    elif method == "KNORA_E":
        for qi in range(n_queries):
            nb = neighbors[qi]
            selected = None
            for kk in range(ensemble.k, 0, -1):
                all_correct = ensemble.correctness[:, nb[:kk]].all(axis=1)
                if all_correct.any():
                    selected = np.flatnonzero(all_correct)
                    break
            if selected is None:
                selected = np.arange(n_pool)
            out[qi] = member_probs[selected, qi].mean()

    return out


def des_predict_proba(ensemble: DesEnsemble, X) -> np.ndarray:
    """Probability of the positive class for each query row (or one query)."""
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != ensemble.dsel_X.shape[1]:
        raise ValueError(
            f"query has {arr.shape[1]} features, ensemble expects {ensemble.dsel_X.shape[1]}"
        )
    out = np.empty(len(arr))
    # Chunk to bound the query-by-DSEL distance matrix.
    chunk = max(1, int(2**22 / max(1, len(ensemble.dsel_X))))
    for start in range(0, len(arr), chunk):
        out[start : start + chunk] = _predict_batch(ensemble, arr[start : start + chunk])
    return out[0] if single else out


def save_des(ensemble: DesEnsemble, path, pool_refs) -> None:
    """Write the ensemble manifest: pool by reference, DSEL inline."""
    payload = {
        "format_version": 1,
        "method": ensemble.method,
        "k": ensemble.k,
        "mcb_similarity_threshold": ensemble.mcb_similarity_threshold,
        "pool": list(pool_refs),
        "dsel": {"X": ensemble.dsel_X.tolist(), "y": ensemble.dsel_y.tolist()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def load_des(path, base_dir=None) -> DesEnsemble:
    import os

    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    base = base_dir if base_dir is not None else os.path.dirname(os.fspath(path))
    pool = [load_model(os.path.join(base, ref)) for ref in data["pool"]]
    return build_des(
        pool,
        np.asarray(data["dsel"]["X"], dtype=float),
        np.asarray(data["dsel"]["y"], dtype=int),
        k=int(data["k"]),
        method=data["method"],
        mcb_similarity_threshold=float(data["mcb_similarity_threshold"]),
    )
