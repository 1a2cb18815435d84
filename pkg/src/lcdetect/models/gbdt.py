"""Gradient boosted regression trees on logistic loss, grown either level by
level (depthwise) or by repeatedly splitting the best-gain leaf (leafwise).

Split search is exact greedy over all midpoints between distinct sorted
feature values; gain and leaf weights use the second-order statistics
G = sum(p - y) and H = sum(p(1-p)) with a fixed L2 leaf penalty lambda = 1,
leaf weight -G/(H + lambda). The ensemble margin is
base_score + eta * sum(tree outputs) and the base score is the log-odds of
the training prevalence.
"""

from __future__ import annotations

import numpy as np

from .base import ClassifierModel, register, sigmoid

LAMBDA = 1.0


class _Tree:
    """Flat-array binary tree; leaves have feature == -1 and carry weights."""

    __slots__ = ("feature", "threshold", "left", "right", "weight")

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.weight = []

    def add_leaf(self, weight: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(float(weight))
        return len(self.feature) - 1

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = float(threshold)
        self.left[node] = left
        self.right[node] = right

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f == -1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        node_of = np.zeros(len(X), dtype=int)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        weight = np.asarray(self.weight)
        active = feature[node_of] != -1
        while active.any():
            nodes = node_of[active]
            go_left = X[active, feature[nodes]] <= threshold[nodes]
            node_of[active] = np.where(go_left, left[nodes], right[nodes])
            active = feature[node_of] != -1
        out[:] = weight[node_of]
        return out

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": [float(t) for t in self.threshold],
            "left": list(self.left),
            "right": list(self.right),
            "weight": [float(w) for w in self.weight],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "_Tree":
        tree = cls()
        tree.feature = list(data["feature"])
        tree.threshold = [float(t) for t in data["threshold"]]
        tree.left = list(data["left"])
        tree.right = list(data["right"])
        tree.weight = [float(w) for w in data["weight"]]
        return tree


def _leaf_weight(g_sum: float, h_sum: float) -> float:
    return -g_sum / (h_sum + LAMBDA)


def _node_score(g_sum: float, h_sum: float) -> float:
    return g_sum * g_sum / (h_sum + LAMBDA)


class _SplitFinder:
    """Per-node best-split search reusing one global presort per feature."""

    def __init__(self, X: np.ndarray, min_child_weight: float, min_data_in_leaf: int):
        self.X = X
        self.order = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]
        self.min_child_weight = min_child_weight
        self.min_data_in_leaf = min_data_in_leaf

    def best_split(self, rows_mask: np.ndarray, g: np.ndarray, h: np.ndarray):
        """Returns (gain, feature, threshold, left_rows, right_rows) or None.

        gain = 0.5 * (scoreL + scoreR - scoreParent); ties keep the earliest
        (feature, position) candidate, so the search is deterministic.
        """
        g_total = float(g[rows_mask].sum())
        h_total = float(h[rows_mask].sum())
        parent_score = _node_score(g_total, h_total)
        n_node = int(rows_mask.sum())

        best = None
        for j, order_j in enumerate(self.order):
            idx = order_j[rows_mask[order_j]]
            if len(idx) < 2:
                continue
            vals = self.X[idx, j]
            gl = np.cumsum(g[idx])[:-1]
            hl = np.cumsum(h[idx])[:-1]
            distinct = vals[:-1] < vals[1:]
            if not distinct.any():
                continue
            gr = g_total - gl
            hr = h_total - hl
            valid = distinct.copy()
            if self.min_child_weight > 0:
                valid &= (hl >= self.min_child_weight) & (hr >= self.min_child_weight)
            if self.min_data_in_leaf > 0:
                counts_left = np.arange(1, n_node)
                valid &= (counts_left >= self.min_data_in_leaf) & (
                    n_node - counts_left >= self.min_data_in_leaf
                )
            if not valid.any():
                continue
            gains = np.full(n_node - 1, -np.inf)
            gains[valid] = 0.5 * (
                gl[valid] ** 2 / (hl[valid] + LAMBDA)
                + gr[valid] ** 2 / (hr[valid] + LAMBDA)
                - parent_score
            )
            pos = int(np.argmax(gains))
            gain = float(gains[pos])
            if best is None or gain > best[0]:
                threshold = (vals[pos] + vals[pos + 1]) / 2.0
                left_idx = idx[: pos + 1]
                best = (gain, j, threshold, left_idx)
        if best is None:
            return None
        gain, j, threshold, left_idx = best
        left_mask = np.zeros_like(rows_mask)
        left_mask[left_idx] = True
        right_mask = rows_mask & ~left_mask
        return gain, j, threshold, left_mask, right_mask


def _grow_depthwise(finder, rows, g, h, max_depth):
    tree = _Tree()
    g_sum = float(g[rows].sum())
    h_sum = float(h[rows].sum())
    root = tree.add_leaf(_leaf_weight(g_sum, h_sum))
    frontier = [(root, rows)]
    for _ in range(max_depth):
        next_frontier = []
        for node, mask in frontier:
            found = finder.best_split(mask, g, h)
            if found is None or found[0] <= 0.0:
                continue
            _, feat, thr, left_mask, right_mask = found
            left = tree.add_leaf(_leaf_weight(float(g[left_mask].sum()), float(h[left_mask].sum())))
            right = tree.add_leaf(
                _leaf_weight(float(g[right_mask].sum()), float(h[right_mask].sum()))
            )
            tree.make_split(node, feat, thr, left, right)
            next_frontier.append((left, left_mask))
            next_frontier.append((right, right_mask))
        frontier = next_frontier
        if not frontier:
            break
    return tree


def _grow_leafwise(finder, rows, g, h, max_depth, num_leaves, min_gain):
    tree = _Tree()
    g_sum = float(g[rows].sum())
    h_sum = float(h[rows].sum())
    root = tree.add_leaf(_leaf_weight(g_sum, h_sum))
    # candidate leaves: (node id, rows mask, depth)
    leaves = [(root, rows, 0)]
    while tree.n_leaves < num_leaves:
        best = None
        for i, (node, mask, depth) in enumerate(leaves):
            if depth >= max_depth:
                continue
            found = finder.best_split(mask, g, h)
            if found is None or found[0] <= min_gain:
                continue
            if best is None or found[0] > best[0][0]:
                best = (found, i)
        if best is None:
            break
        (gain, feat, thr, left_mask, right_mask), i = best
        node, _, depth = leaves.pop(i)
        left = tree.add_leaf(_leaf_weight(float(g[left_mask].sum()), float(h[left_mask].sum())))
        right = tree.add_leaf(_leaf_weight(float(g[right_mask].sum()), float(h[right_mask].sum())))
        tree.make_split(node, feat, thr, left, right)
        leaves.append((left, left_mask, depth + 1))
        leaves.append((right, right_mask, depth + 1))
    return tree


def logistic_loss(y: np.ndarray, margins: np.ndarray) -> float:
    """Mean logistic loss at raw margins."""
    t = 2.0 * y - 1.0
    return float(np.logaddexp(0.0, -t * margins).mean())


class GbdtModel(ClassifierModel):
    def __init__(self, trees, eta, base_score, hyperparameters=None, seed=0):
        self.trees = list(trees)
        self.eta = float(eta)
        self.base_score = float(base_score)
        self.hyperparameters = dict(hyperparameters or {})
        self.seed = int(seed)
        self.training_loss_ = None  # per-round mean logistic loss, set by train_gbdt

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        margins = np.full(len(X), self.base_score)
        for tree in self.trees:
            margins += self.eta * tree.predict(X)
        return margins

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "trees": [t.to_dict() for t in self.trees],
            "eta": self.eta,
            "base_score": self.base_score,
            "hyperparameters": self.hyperparameters,
            "platt": None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict):
        return cls(
            trees=[_Tree.from_dict(t) for t in data["trees"]],
            eta=data["eta"],
            base_score=data["base_score"],
            hyperparameters=data["hyperparameters"],
            seed=data["seed"],
        )


@register
class DepthwiseGbdtModel(GbdtModel):
    kind = "gbdt_depthwise"


@register
class LeafwiseGbdtModel(GbdtModel):
    kind = "gbdt_leafwise"


def train_gbdt(
    X,
    y,
    growth: str = "depthwise",
    eta: float = 0.1,
    n_estimators: int = 100,
    max_depth: int = 3,
    min_child_weight: float = 0.0,
    num_leaves: int = 31,
    min_data_in_leaf: int = 0,
    min_gain_to_split: float = 0.0,
    seed: int = 0,
) -> GbdtModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(X).any():
        raise ValueError("GBDT training requires a complete matrix")
    if growth not in ("depthwise", "leafwise"):
        raise ValueError(f"unknown growth mode {growth!r}")
    if n_estimators < 0:
        raise ValueError("n_estimators must be >= 0")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if growth == "leafwise" and num_leaves < 2:
        raise ValueError("num_leaves must be >= 2")

    prevalence = float(y.mean())
    if prevalence <= 0.0 or prevalence >= 1.0:
        raise ValueError("GBDT training requires both classes present")
    base_score = float(np.log(prevalence / (1.0 - prevalence)))

    hyper = {
        "growth": growth,
        "eta": eta,
        "n_estimators": n_estimators,
        "max_depth": max_depth,
        "min_child_weight": min_child_weight,
        "num_leaves": num_leaves,
        "min_data_in_leaf": min_data_in_leaf,
        "min_gain_to_split": min_gain_to_split,
    }
    cls = DepthwiseGbdtModel if growth == "depthwise" else LeafwiseGbdtModel

    finder = _SplitFinder(
        X,
        min_child_weight=min_child_weight if growth == "depthwise" else 0.0,
        min_data_in_leaf=min_data_in_leaf if growth == "leafwise" else 0,
    )
    all_rows = np.ones(len(X), dtype=bool)
    margins = np.full(len(X), base_score)
    losses = [logistic_loss(y, margins)]
    trees = []
    for _ in range(n_estimators):
        p = sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        if growth == "depthwise":
            tree = _grow_depthwise(finder, all_rows, g, h, max_depth)
        else:
            tree = _grow_leafwise(finder, all_rows, g, h, max_depth, num_leaves, min_gain_to_split)
        trees.append(tree)
        margins += eta * tree.predict(X)
        losses.append(logistic_loss(y, margins))

    model = cls(trees=trees, eta=eta, base_score=base_score, hyperparameters=hyper, seed=seed)
    model.training_loss_ = losses
    return model
