"""Evaluation machinery: stratified folds, threshold metrics, ROC/AUC,
calibration bins, decision curves, Friedman/Nemenyi rank tests, operating
points at fixed specificity, and the reader-study comparison.

The classification rule is strict everywhere: a record is flagged positive
iff its probability exceeds the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats


def stratified_kfold(y, k: int = 5, seed: int = 0) -> list:
    """Partition indices into k folds with per-fold class counts within one
    record of the proportional share. Returns [(train_idx, val_idx), ...]."""
    y = np.asarray(y)
    n = len(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        if len(idx) < k:
            raise ValueError(f"class {cls} has {len(idx)} members, fewer than k={k}")
        # Deal shuffled members round-robin so fold counts differ by at most 1.
        for pos, i in enumerate(idx):
            fold_of[i] = pos % k
    folds = []
    for f in range(k):
        val = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        folds.append((train, val))
    return folds


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(y, probs, threshold: float = 0.5) -> ConfusionCounts:
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    if y.shape != probs.shape:
        raise ValueError(f"labels {y.shape} and probabilities {probs.shape} differ in length")
    pred = probs > threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int):
    return num / den if den else None


def metrics(counts: ConfusionCounts) -> dict:
    """Threshold metrics; ratios with zero denominators are None, not 0."""
    sens = _ratio(counts.tp, counts.tp + counts.fn)
    spec = _ratio(counts.tn, counts.tn + counts.fp)
    ppv = _ratio(counts.tp, counts.tp + counts.fp)
    acc = _ratio(counts.tp + counts.tn, counts.n)
    if sens is None or ppv is None or (ppv + sens) == 0:
        f1 = None
    else:
        f1 = 2.0 * ppv * sens / (ppv + sens)
    return {
        "accuracy": acc,
        "sensitivity": sens,
        "specificity": spec,
        "ppv": ppv,
        "f1": f1,
    }


def roc_auc(y, probs) -> float:
    """AUC via the Mann-Whitney identity: midranks of positives, ties count
    one half."""
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")
    ranks = stats.rankdata(probs)
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(y, probs) -> list:
    """(fpr, tpr, threshold) points at every distinct score, endpoints included."""
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve requires both classes present")
    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    sorted_pos = (y[order] == 1).astype(int)
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    n = len(y)
    while i < n:
        t = sorted_probs[i]
        while i < n and sorted_probs[i] == t:
            tp += sorted_pos[i]
            fp += 1 - sorted_pos[i]
            i += 1
        # Threshold strictly below t flags everything seen so far.
        points.append((fp / n_neg, tp / n_pos, float(t)))
    return points


def calibration_bins(y, probs, bin_width: float = 0.1) -> list:
    """Histogram of predictions into [0,w),...,[1-w,1] bins with per-bin
    observed positive fraction; empty bins keep count 0."""
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0,1]")
    n_bins = int(round(1.0 / bin_width))
    idx = np.minimum((probs / bin_width).astype(int), n_bins - 1)
    bins = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        bins.append(
            {
                "lower": b * bin_width,
                "upper": (b + 1) * bin_width,
                "count": count,
                "mean_predicted": float(probs[mask].mean()) if count else None,
                "observed_fraction": float(np.mean(y[mask] == 1)) if count else None,
            }
        )
    return bins


@dataclass(frozen=True)
class DecisionCurve:
    thresholds: np.ndarray
    net_benefit_model: np.ndarray
    net_benefit_treat_all: np.ndarray
    net_benefit_treat_none: np.ndarray

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "net_benefit_model": self.net_benefit_model.tolist(),
            "net_benefit_treat_all": self.net_benefit_treat_all.tolist(),
            "net_benefit_treat_none": self.net_benefit_treat_none.tolist(),
        }


def decision_curve(y, probs, threshold_grid) -> DecisionCurve:
    """Net benefit TP/N - FP/N * pt/(1-pt) against treat-all and treat-none."""
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    grid = np.asarray(threshold_grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("threshold grid must lie strictly inside (0,1)")
    n = len(y)
    prevalence = float(np.mean(y == 1))
    nb_model = np.empty_like(grid)
    for i, pt in enumerate(grid):
        c = confusion(y, probs, threshold=pt)
        nb_model[i] = c.tp / n - c.fp / n * (pt / (1.0 - pt))
    nb_all = prevalence - (1.0 - prevalence) * (grid / (1.0 - grid))
    return DecisionCurve(
        thresholds=grid,
        net_benefit_model=nb_model,
        net_benefit_treat_all=nb_all,
        net_benefit_treat_none=np.zeros_like(grid),
    )


def _studentized_range_cdf(q: float, k: int) -> float:
    """CDF of the studentized range with infinite degrees of freedom,
    P(max_i Z_i - min_i Z_i < q) for k iid standard normals, by quadrature."""
    if q <= 0:
        return 0.0

    def integrand(z):
        return stats.norm.pdf(z) * (stats.norm.cdf(z) - stats.norm.cdf(z - q)) ** (k - 1)

    val, _ = integrate.quad(integrand, -9.0, 9.0, limit=300)
    return min(1.0, k * val)


def _studentized_range_quantile(p: float, k: int) -> float:
    return optimize.brentq(lambda q: _studentized_range_cdf(q, k) - p, 1e-9, 60.0, xtol=1e-10)


def nemenyi_critical_difference(k: int, n: int, alpha: float = 0.05) -> float:
    """CD = q_alpha * sqrt(k(k+1)/(6N)); q_alpha is the infinite-df
    studentized-range quantile divided by sqrt(2)."""
    q_alpha = _studentized_range_quantile(1.0 - alpha, k) / math.sqrt(2.0)
    return q_alpha * math.sqrt(k * (k + 1) / (6.0 * n))


@dataclass(frozen=True)
class RankTestResult:
    friedman_statistic: float
    friedman_p: float
    average_ranks: np.ndarray  # per model, rank 1 = best
    pairwise_p: np.ndarray  # models x models, symmetric, unit diagonal
    critical_difference: float
    alpha: float

    def to_dict(self) -> dict:
        return {
            "friedman_statistic": self.friedman_statistic,
            "friedman_p": self.friedman_p,
            "average_ranks": self.average_ranks.tolist(),
            "pairwise_p": self.pairwise_p.tolist(),
            "critical_difference": self.critical_difference,
            "alpha": self.alpha,
        }


def friedman_nemenyi(score_matrix, alpha: float = 0.05) -> RankTestResult:
    """Friedman chi-square over within-fold ranks (midranks for ties, higher
    score = better = lower rank) plus Nemenyi pairwise p-values from the
    studentized-range distribution."""
    scores = np.asarray(score_matrix, dtype=float)
    if scores.ndim != 2:
        raise ValueError("score matrix must be 2-D (models x folds)")
    k, n = scores.shape
    if k < 2 or n < 2:
        raise ValueError("need at least 2 models and 2 folds")
    ranks = np.empty_like(scores)
    for j in range(n):
        ranks[:, j] = stats.rankdata(-scores[:, j])
    avg_ranks = ranks.mean(axis=1)
    statistic = 12.0 * n / (k * (k + 1)) * float(np.sum((avg_ranks - (k + 1) / 2.0) ** 2))
    p = float(stats.chi2.sf(statistic, k - 1))

    se = math.sqrt(k * (k + 1) / (6.0 * n))
    pairwise = np.ones((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            q = abs(avg_ranks[a] - avg_ranks[b]) / se
            p_ab = 1.0 - _studentized_range_cdf(q * math.sqrt(2.0), k)
            pairwise[a, b] = pairwise[b, a] = min(1.0, max(0.0, p_ab))
    return RankTestResult(
        friedman_statistic=float(statistic),
        friedman_p=p,
        average_ranks=avg_ranks,
        pairwise_p=pairwise,
        critical_difference=nemenyi_critical_difference(k, n, alpha),
        alpha=alpha,
    )


# Fixed-specificity targets in reports are often quoted rounded to 3 decimals
# (e.g. "70.2%"); the comparison absorbs that rounding.
SPECIFICITY_TOLERANCE = 5e-4


def threshold_at_specificity(y, probs, target_spec: float, tol: float = SPECIFICITY_TOLERANCE):
    """Smallest threshold whose specificity reaches the target (within tol).

    Candidate thresholds are the observed scores plus a sentinel below the
    minimum; returns (threshold, achieved_specificity, achieved_sensitivity).
    """
    y = np.asarray(y)
    probs = np.asarray(probs, dtype=float)
    if target_spec > 1.0:
        raise ValueError(f"target specificity {target_spec} unreachable (> 1)")
    if int(np.sum(y == 0)) == 0:
        raise ValueError("threshold_at_specificity requires negatives present")
    candidates = [float(probs.min()) - 1.0] + sorted(set(probs.tolist()))
    for t in candidates:
        c = confusion(y, probs, threshold=t)
        spec = c.tn / (c.tn + c.fp)
        if spec >= target_spec - tol:
            sens = _ratio(c.tp, c.tp + c.fn)
            return float(t), float(spec), (None if sens is None else float(sens))
    raise ValueError(f"no threshold reaches specificity {target_spec}")  # pragma: no cover


def reader_comparison(y, model_probs, votes, stages=None) -> dict:
    """Compare model predictions against per-reader votes.

    votes: (n_readers, n_records) 0/1 array. The averaged-reader operating
    point is the majority vote (ties positive); the model is evaluated at the
    threshold matching the averaged readers' specificity. When stages are
    given, per-stage correct-detection counts are reported for LC records.
    """
    y = np.asarray(y)
    model_probs = np.asarray(model_probs, dtype=float)
    votes = np.asarray(votes, dtype=int)
    if votes.ndim != 2 or votes.shape[1] != len(y):
        raise ValueError(
            f"votes shape {votes.shape} does not align with {len(y)} records"
        )
    n_readers = votes.shape[0]
    if n_readers < 1:
        raise ValueError("need at least one reader")

    def _vote_metrics(v):
        c = ConfusionCounts(
            tp=int(np.sum((v == 1) & (y == 1))),
            fp=int(np.sum((v == 1) & (y == 0))),
            tn=int(np.sum((v == 0) & (y == 0))),
            fn=int(np.sum((v == 0) & (y == 1))),
        )
        return c, metrics(c)

    readers = []
    for r in range(n_readers):
        c, m = _vote_metrics(votes[r])
        readers.append({"confusion": c.to_dict(), "metrics": m})

    majority = (votes.sum(axis=0) * 2 >= n_readers).astype(int)
    maj_counts, maj_metrics = _vote_metrics(majority)
    if maj_metrics["specificity"] is None:
        raise ValueError("reader comparison requires negative records")

    thr, ach_spec, ach_sens = threshold_at_specificity(
        y, model_probs, maj_metrics["specificity"]
    )
    model_counts = confusion(y, model_probs, threshold=thr)
    model_metrics = metrics(model_counts)

    result = {
        "readers": readers,
        "majority": {"confusion": maj_counts.to_dict(), "metrics": maj_metrics},
        "model": {
            "threshold": thr,
            "achieved_specificity": ach_spec,
            "achieved_sensitivity": ach_sens,
            "confusion": model_counts.to_dict(),
            "metrics": model_metrics,
        },
    }

    if stages is not None:
        stage_rows = {}
        model_pred = model_probs > thr
        for s in ("I", "II", "III", "IV"):
            mask = np.array([(st == s) and (lbl == 1) for st, lbl in zip(stages, y)])
            stage_rows[s] = {
                "actual": int(mask.sum()),
                "model_correct": int(np.sum(mask & model_pred)),
                "readers_correct": int(np.sum(mask & (majority == 1))),
            }
        result["stages"] = stage_rows
    return result


def fold_metric_table(y_by_fold, probs_by_fold, threshold: float = 0.5) -> dict:
    """Per-fold confusion metrics plus AUC; returns {'folds': [...],
    'mean': {...}, 'sd': {...}} with mean-of-fold-metrics aggregation."""
    names = ["accuracy", "sensitivity", "specificity", "ppv", "f1", "roc_auc"]
    folds = []
    for y, probs in zip(y_by_fold, probs_by_fold):
        counts = confusion(y, probs, threshold=threshold)
        m = metrics(counts)
        m["roc_auc"] = roc_auc(y, probs)
        folds.append({"confusion": counts.to_dict(), "metrics": m})
    agg_mean, agg_sd = {}, {}
    for name in names:
        vals = [f["metrics"][name] for f in folds if f["metrics"][name] is not None]
        agg_mean[name] = float(np.mean(vals)) if vals else None
        agg_sd[name] = float(np.std(vals)) if vals else None
    return {"folds": folds, "mean": agg_mean, "sd": agg_sd}
