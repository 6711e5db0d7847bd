"""Gradient boosted regression trees (squared error and log-loss).

Trees are grown depth-first with an exact greedy search over every distinct
value of every feature; the split criterion is the reduction in squared error
of the negative gradient. Squared-error leaves hold the mean residual,
log-loss leaves a single Newton step ``sum(g) / sum(p (1 - p))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

LOSSES = ("squared_error", "log_loss")


@dataclass(frozen=True)
class GBMParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 10
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValidationError("n_trees >= 0, max_depth >= 1 and min_leaf >= 1 required")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValidationError("subsample must lie in (0, 1]")

    def with_seed(self, seed: int) -> "GBMParams":
        return GBMParams(self.n_trees, self.max_depth, self.learning_rate, self.min_leaf, self.subsample, int(seed))


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.intp)
        rows = np.arange(x.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            r = rows[internal]
            nd = node[internal]
            go_left = x[r, feat[internal]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            np.asarray(data["feature"], dtype=np.intp),
            np.asarray(data["threshold"], dtype=float),
            np.asarray(data["left"], dtype=np.intp),
            np.asarray(data["right"], dtype=np.intp),
            np.asarray(data["value"], dtype=float),
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class BoostedModel:
    trees: tuple[Tree, ...]
    learning_rate: float
    n_trees: int
    max_depth: int
    loss: str
    base_score: float
    params: GBMParams = field(default_factory=GBMParams)
    flagged: bool = False
    train_loss: tuple[float, ...] = ()

    def predict_raw(self, x) -> np.ndarray:
        x = _as_matrix(x)
        out = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(x)
        return out

    def predict(self, x) -> np.ndarray:
        raw = self.predict_raw(x)
        return _sigmoid(raw) if self.loss == "log_loss" else raw

    def to_dict(self) -> dict:
        return {
            "kind": "gbm",
            "loss": self.loss,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.params.min_leaf,
            "subsample": self.params.subsample,
            "seed": self.params.seed,
            "flagged": self.flagged,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BoostedModel":
        params = GBMParams(
            int(data["n_trees"]), int(data["max_depth"]), float(data["learning_rate"]),
            int(data.get("min_leaf", 10)), float(data.get("subsample", 1.0)), int(data.get("seed", 0)),
        )
        return cls(
            tuple(Tree.from_dict(t) for t in data["trees"]),
            float(data["learning_rate"]), int(data["n_trees"]), int(data["max_depth"]),
            data["loss"], float(data["base_score"]), params, bool(data.get("flagged", False)),
        )


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


class _TreeGrower:
    def __init__(self, x, orders, max_depth, min_leaf):
        self.x = x
        self.orders = orders
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def grow(self, rows_mask, grad, hess):
        # node_of[i] = current node of training row i, -1 when row not in the bag
        node_of = np.where(rows_mask, 0, -1)
        feature, threshold, left, right = [-1], [0.0], [-1], [-1]
        frontier = [(0, 0, np.flatnonzero(rows_mask))]
        while frontier:
            node, depth, rows = frontier.pop()
            if depth >= self.max_depth:
                continue
            split = self._best_split(node_of, node, rows.shape[0], grad)
            if split is None:
                continue
            f, thr = split
            li, ri = len(feature), len(feature) + 1
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
            go_left = self.x[rows, f] <= thr
            lrows, rrows = rows[go_left], rows[~go_left]
            node_of[lrows] = li
            node_of[rrows] = ri
            frontier.append((ri, depth + 1, rrows))
            frontier.append((li, depth + 1, lrows))
        m = len(feature)
        bag = node_of >= 0
        gs = np.bincount(node_of[bag], weights=grad[bag], minlength=m)
        if hess is None:
            cnt = np.bincount(node_of[bag], minlength=m)
            value = np.where(cnt > 0, gs / np.maximum(cnt, 1), 0.0)
        else:
            hs = np.bincount(node_of[bag], weights=hess[bag], minlength=m)
            value = np.where(hs > 1e-12, gs / np.where(hs > 1e-12, hs, 1.0), 0.0)
        value[np.asarray(feature) >= 0] = 0.0
        tree = Tree(
            np.asarray(feature, dtype=np.intp),
            np.asarray(threshold, dtype=float),
            np.asarray(left, dtype=np.intp),
            np.asarray(right, dtype=np.intp),
            value,
        )
        return tree, node_of

    def _best_split(self, node_of, node, m, grad):
        min_leaf = self.min_leaf
        if m < 2 * min_leaf:
            return None
        best_gain, best = 1e-12, None
        for f, order in enumerate(self.orders):
            idx = order[node_of[order] == node]
            xs = self.x[idx, f]
            cs = np.cumsum(grad[idx])
            total = cs[-1]
            # candidate i puts rows 0..i on the left
            lo, hi = min_leaf - 1, m - min_leaf
            if hi <= lo:
                continue
            pos = np.arange(lo, hi)
            valid = xs[pos] < xs[pos + 1]
            if not valid.any():
                continue
            pos = pos[valid]
            nl = pos + 1.0
            sl = cs[pos]
            gain = sl * sl / nl + (total - sl) ** 2 / (m - nl) - total * total / m
            j = int(np.argmax(gain))
            if gain[j] > best_gain:
                i = pos[j]
                thr = 0.5 * (xs[i] + xs[i + 1])
                if not xs[i] <= thr < xs[i + 1]:
                    thr = xs[i]
                best_gain, best = float(gain[j]), (f, float(thr))
        return best


def _loss_value(loss, target, raw):
    if loss == "squared_error":
        return float(np.mean((target - raw) ** 2))
    return float(np.mean(np.logaddexp(0.0, raw) - target * raw))


def fit_gbm(x, target, loss: str = "squared_error", params: GBMParams | None = None) -> BoostedModel:
    """Fit a boosted ensemble; identical inputs and seed give identical trees."""
    params = params or GBMParams()
    if loss not in LOSSES:
        raise ValidationError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    x = _as_matrix(x)
    target = np.asarray(target, dtype=float).reshape(-1)
    n = x.shape[0]
    if target.shape[0] != n:
        raise ValidationError("x and target lengths differ")
    if n < 2 * params.min_leaf:
        raise ValidationError(f"need at least 2*min_leaf = {2 * params.min_leaf} rows, got {n}")

    flagged = False
    if loss == "squared_error":
        base = float(target.mean())
        if np.all(target == target[0]):
            return BoostedModel((), params.learning_rate, 0, params.max_depth, loss, base, params, False,
                                (0.0,))
    else:
        if np.any((target != 0.0) & (target != 1.0)):
            raise ValidationError("log_loss target must be 0/1")
        rate = float(target.mean())
        if rate in (0.0, 1.0):
            rate = min(max(rate, 1e-6), 1.0 - 1e-6)
            base = float(np.log(rate / (1.0 - rate)))
            return BoostedModel((), params.learning_rate, 0, params.max_depth, loss, base, params, True)
        base = float(np.log(rate / (1.0 - rate)))

    orders = [np.argsort(x[:, j], kind="stable") for j in range(x.shape[1])]
    grower = _TreeGrower(x, orders, params.max_depth, params.min_leaf)
    rng = np.random.default_rng(np.random.SeedSequence(int(params.seed)))
    raw = np.full(n, base)
    history = [_loss_value(loss, target, raw)]
    trees = []
    full_bag = np.ones(n, dtype=bool)
    n_bag = max(int(round(params.subsample * n)), 2 * params.min_leaf)
    for _ in range(params.n_trees):
        if loss == "squared_error":
            grad, hess = target - raw, None
        else:
            prob = _sigmoid(raw)
            grad, hess = target - prob, prob * (1.0 - prob)
        if params.subsample < 1.0:
            bag = np.zeros(n, dtype=bool)
            bag[rng.choice(n, size=n_bag, replace=False)] = True
        else:
            bag = full_bag
        tree, node_of = grower.grow(bag, grad, hess)
        if params.subsample < 1.0:
            raw = raw + params.learning_rate * tree.predict(x)
        else:
            raw = raw + params.learning_rate * tree.value[node_of]
        trees.append(tree)
        history.append(_loss_value(loss, target, raw))
    return BoostedModel(tuple(trees), params.learning_rate, len(trees), params.max_depth, loss, base,
                        params, flagged, tuple(history))
