"""Linear classifiers: L2-regularized logistic regression and a linear SVM
with Platt-scaled probabilities.

Both are trained full-batch with a deterministic quasi-Newton optimizer and
declared converged only when the gradient norm reaches the tolerance.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize

from ..errors import ConvergenceError
from .base import ClassifierModel, clip_probability, register, sigmoid


def logistic_objective(params, X, y, C):
    """Mean negative log-likelihood plus ||w||^2/(2C); bias unpenalized.

    The mean (rather than summed) data term makes the objective invariant
    under uniform duplication of the training rows.
    """
    w = params[:-1]
    b = params[-1]
    z = X @ w + b
    # log(1 + exp(-t*z)) with t in {-1, +1}, computed stably
    t = 2.0 * y - 1.0
    m = -t * z
    loss = np.logaddexp(0.0, m).mean() + (w @ w) / (2.0 * C)
    p = sigmoid(z)
    r = (p - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + w / C
    grad[-1] = r.sum()
    return loss, grad


@register
class LogisticModel(ClassifierModel):
    kind = "logistic"

    def __init__(self, w, b, hyperparameters=None, seed=0):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)
        self.hyperparameters = dict(hyperparameters or {})
        self.seed = int(seed)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict_proba(self, X) -> np.ndarray:
        return clip_probability(sigmoid(self.decision_function(X)))

    def to_dict(self) -> dict:
        return {
            "weights": self.w.tolist(),
            "bias": self.b,
            "hyperparameters": self.hyperparameters,
            "platt": None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LogisticModel":
        return cls(
            w=data["weights"],
            b=data["bias"],
            hyperparameters=data["hyperparameters"],
            seed=data["seed"],
        )


def train_logistic(X, y, C: float = 0.3, max_iter: int = 1000, tol: float = 1e-8, seed: int = 0):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be binary 0/1")
    x0 = np.zeros(X.shape[1] + 1)
    res = optimize.minimize(
        logistic_objective,
        x0,
        args=(X, y, C),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": tol / 10.0, "maxcor": 20},
    )
    _, grad = logistic_objective(res.x, X, y, C)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise ConvergenceError(
            f"logistic regression did not converge within {max_iter} iterations "
            f"(gradient norm {gnorm:.3e} > tol {tol:.3e})",
            gradient_norm=gnorm,
        )
    return LogisticModel(
        w=res.x[:-1],
        b=res.x[-1],
        hyperparameters={"C": C, "max_iter": max_iter, "tol": tol},
        seed=seed,
    )


def svm_objective(params, X, t, C):
    """Squared-hinge primal: 0.5*||w||^2 + C * sum(max(0, 1 - t*z)^2)."""
    w = params[:-1]
    b = params[-1]
    z = X @ w + b
    margin = 1.0 - t * z
    active = margin > 0
    loss = 0.5 * (w @ w) + C * float((margin[active] ** 2).sum())
    coeff = np.zeros_like(z)
    coeff[active] = -2.0 * C * margin[active] * t[active]
    grad = np.empty_like(params)
    grad[:-1] = w + X.T @ coeff
    grad[-1] = coeff.sum()
    return loss, grad


def fit_platt(scores, y, max_iter: int = 100):
    """Newton fit of p = sigmoid(A*s + B) to held-out scores with the usual
    smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2)."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    target = np.where(y == 1, hi, lo)

    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def nll(a, b):
        z = a * scores + b
        return float(np.sum(np.logaddexp(0.0, z) - target * z))

    best = nll(A, B)
    lam = 1e-12
    for _ in range(max_iter):
        p = sigmoid(A * scores + B)
        d1 = p - target
        d2 = p * (1.0 - p)
        g = np.array([np.dot(scores, d1), d1.sum()])
        h11 = np.dot(scores * scores, d2)
        h12 = np.dot(scores, d2)
        h22 = d2.sum()
        if np.linalg.norm(g) < 1e-10:
            break
        H = np.array([[h11 + lam, h12], [h12, h22 + lam]])
        step = np.linalg.solve(H, g)
        # Backtracking keeps the iteration monotone.
        stepsize = 1.0
        for _ in range(40):
            cand = nll(A - stepsize * step[0], B - stepsize * step[1])
            if cand < best + 1e-12:
                A -= stepsize * step[0]
                B -= stepsize * step[1]
                best = cand
                break
            stepsize *= 0.5
        else:
            break
    return float(A), float(B)


@register
class LinearSvmModel(ClassifierModel):
    kind = "linear_svm"

    def __init__(self, w, b, platt, hyperparameters=None, seed=0):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)
        self.platt = (float(platt[0]), float(platt[1]))
        self.hyperparameters = dict(hyperparameters or {})
        self.seed = int(seed)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict_proba(self, X) -> np.ndarray:
        A, B = self.platt
        return clip_probability(sigmoid(A * self.decision_function(X) + B))

    def to_dict(self) -> dict:
        return {
            "weights": self.w.tolist(),
            "bias": self.b,
            "platt": [self.platt[0], self.platt[1]],
            "hyperparameters": self.hyperparameters,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearSvmModel":
        return cls(
            w=data["weights"],
            b=data["bias"],
            platt=data["platt"],
            hyperparameters=data["hyperparameters"],
            seed=data["seed"],
        )


def _solve_svm(X, t, C, max_iter, tol):
    x0 = np.zeros(X.shape[1] + 1)
    res = optimize.minimize(
        svm_objective,
        x0,
        args=(X, t, C),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": tol / 10.0, "maxcor": 20},
    )
    _, grad = svm_objective(res.x, X, t, C)
    gnorm = float(np.linalg.norm(grad))
    # The squared-hinge gradient scales with C*n; tolerance is relative.
    scale = max(1.0, C * len(t))
    if gnorm > tol * scale:
        raise ConvergenceError(
            f"linear SVM did not converge within {max_iter} iterations "
            f"(gradient norm {gnorm:.3e})",
            gradient_norm=gnorm,
        )
    return res.x[:-1], res.x[-1]


def train_linear_svm(
    X, y, C: float = 49.1, max_iter: int = 5000, tol: float = 1e-6, seed: int = 0, platt_folds: int = 3
):
    """Squared-hinge linear SVM; Platt pair fitted on out-of-fold decision
    scores so the reported probabilities are not trained on their own data."""
    from ..evaluate import stratified_kfold  # local import avoids a cycle at module load

    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    if len(np.unique(y)) < 2:
        raise ValueError("SVM training requires both classes present")
    t = 2.0 * np.asarray(y, dtype=float) - 1.0

    oof_scores = np.empty(len(y))
    for train_idx, val_idx in stratified_kfold(y, k=platt_folds, seed=seed):
        w_f, b_f = _solve_svm(X[train_idx], t[train_idx], C, max_iter, tol)
        oof_scores[val_idx] = X[val_idx] @ w_f + b_f
    A, B = fit_platt(oof_scores, y)

    w, b = _solve_svm(X, t, C, max_iter, tol)
    return LinearSvmModel(
        w=w,
        b=b,
        platt=(A, B),
        hyperparameters={"C": C, "max_iter": max_iter, "tol": tol, "platt_folds": platt_folds},
        seed=seed,
    )
