"""Built-in probabilistic classifiers for the detection layer.

Both are self-contained: a standardized logistic model fit by full-batch
gradient descent, and a small gradient-boosted tree ensemble with Newton
leaf values.  Either can be serialized to a JSON-ready dict and restored.

Decayed prefix representations shrink with the number of observed
triplets, so rows from different observation depths differ in magnitude
by orders of magnitude while the class signal lives in the direction.
Both classifiers therefore normalize each row to unit length before any
other preprocessing; zero rows stay zero.
"""

from __future__ import annotations

import numpy as np

from .errors import FitError, InvalidArgumentError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype="float64")
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unit_rows(features: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm, leaving zero rows untouched."""
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.where(norms == 0.0, 1.0, norms)


def _check_training_data(features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype="float64")
    labels = np.asarray(labels, dtype="float64")
    if features.ndim != 2:
        raise InvalidArgumentError("features must be a 2-D array")
    if labels.shape != (features.shape[0],):
        raise InvalidArgumentError("labels must align with feature rows")
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise InvalidArgumentError("labels must be 0 or 1")
    if np.unique(labels).size < 2:
        raise FitError("training data contains a single class")
    return features, labels


class LogisticClassifier:
    """Standardized logistic regression, full-batch gradient descent."""

    name = "logistic"

    def __init__(
        self,
        steps: int = 2000,
        learning_rate: float = 0.05,
        regularization: float = 3e-2,
    ):
        self.steps = steps
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None
        self.weights: np.ndarray | None = None
        self.bias = 0.0

    def fit(self, features: np.ndarray, labels: np.ndarray, seed: int = 0) -> "LogisticClassifier":
        features, labels = _check_training_data(features, labels)
        features = _unit_rows(features)
        self.mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale[scale == 0.0] = 1.0
        self.scale = scale
        x = (features - self.mean) / self.scale
        n, p = x.shape
        w = np.zeros(p)
        b = 0.0
        for _ in range(self.steps):
            margin = x @ w + b
            residual = _sigmoid(margin) - labels
            grad_w = x.T @ residual / n + self.regularization * w
            grad_b = float(np.mean(residual))
            w -= self.learning_rate * grad_w
            b -= self.learning_rate * grad_b
        self.weights = w
        self.bias = b
        return self

    def predict_probability(self, features: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise FitError("classifier has not been fit")
        features = np.atleast_2d(np.asarray(features, dtype="float64"))
        features = _unit_rows(features)
        x = (features - self.mean) / self.scale
        return _sigmoid(x @ self.weights + self.bias)

    def to_json(self) -> dict:
        if self.weights is None:
            raise FitError("classifier has not been fit")
        return {
            "kind": self.name,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "regularization": self.regularization,
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LogisticClassifier":
        model = cls(
            steps=int(data["steps"]),
            learning_rate=float(data["learning_rate"]),
            regularization=float(data["regularization"]),
        )
        model.mean = np.asarray(data["mean"], dtype="float64")
        model.scale = np.asarray(data["scale"], dtype="float64")
        model.weights = np.asarray(data["weights"], dtype="float64")
        model.bias = float(data["bias"])
        return model


class GBDTClassifier:
    """Boosted depth-2 regression trees on the logistic loss."""

    name = "gbdt"

    def __init__(
        self,
        trees: int = 100,
        depth: int = 2,
        learning_rate: float = 0.1,
        reg_lambda: float = 1.0,
    ):
        self.trees = trees
        self.depth = depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.base_score = 0.0
        self.ensemble: list[dict] = []

    def _leaf_value(self, grad: np.ndarray, hess: np.ndarray, mask: np.ndarray) -> float:
        g = float(grad[mask].sum())
        h = float(hess[mask].sum())
        return -g / (h + self.reg_lambda)

    def _best_split(
        self,
        features: np.ndarray,
        order: np.ndarray,
        grad: np.ndarray,
        hess: np.ndarray,
        mask: np.ndarray,
    ) -> tuple[int, float, float] | None:
        g = np.where(mask, grad, 0.0)[order]
        h = np.where(mask, hess, 0.0)[order]
        g_cum = np.cumsum(g, axis=0)
        h_cum = np.cumsum(h, axis=0)
        g_total = g_cum[-1]
        h_total = h_cum[-1]
        sorted_vals = np.take_along_axis(features, order, axis=0)
        lam = self.reg_lambda
        left_g = g_cum[:-1]
        left_h = h_cum[:-1]
        right_g = g_total - left_g
        right_h = h_total - left_h
        parent = g_total**2 / (h_total + lam)
        gain = left_g**2 / (left_h + lam) + right_g**2 / (right_h + lam) - parent
        # a split is only real where consecutive sorted values differ and each
        # side actually holds in-node samples
        valid = sorted_vals[:-1] != sorted_vals[1:]
        valid &= (left_h > 0) & (right_h > 0)
        gain = np.where(valid, gain, -np.inf)
        flat = int(np.argmax(gain))
        best = gain.reshape(-1)[flat]
        if not np.isfinite(best) or best <= 1e-12:
            return None
        row, col = np.unravel_index(flat, gain.shape)
        threshold = 0.5 * (sorted_vals[row, col] + sorted_vals[row + 1, col])
        return int(col), float(threshold), float(best)

    def _build_node(
        self,
        features: np.ndarray,
        order: np.ndarray,
        grad: np.ndarray,
        hess: np.ndarray,
        mask: np.ndarray,
        depth: int,
    ) -> dict:
        if depth < self.depth and mask.sum() >= 2:
            split = self._best_split(features, order, grad, hess, mask)
            if split is not None:
                col, threshold, _ = split
                left = mask & (features[:, col] <= threshold)
                right = mask & ~(features[:, col] <= threshold)
                if left.any() and right.any():
                    return {
                        "feature": col,
                        "threshold": threshold,
                        "left": self._build_node(features, order, grad, hess, left, depth + 1),
                        "right": self._build_node(features, order, grad, hess, right, depth + 1),
                    }
        return {"value": self._leaf_value(grad, hess, mask)}

    def _tree_scores(self, node: dict, features: np.ndarray) -> np.ndarray:
        if "value" in node:
            return np.full(features.shape[0], node["value"])
        go_left = features[:, node["feature"]] <= node["threshold"]
        out = np.empty(features.shape[0])
        out[go_left] = self._tree_scores(node["left"], features[go_left])
        out[~go_left] = self._tree_scores(node["right"], features[~go_left])
        return out

    def fit(self, features: np.ndarray, labels: np.ndarray, seed: int = 0) -> "GBDTClassifier":
        features, labels = _check_training_data(features, labels)
        features = _unit_rows(features)
        n = features.shape[0]
        positive_rate = float(np.clip(labels.mean(), 1e-6, 1.0 - 1e-6))
        self.base_score = float(np.log(positive_rate / (1.0 - positive_rate)))
        order = np.argsort(features, axis=0, kind="stable")
        margin = np.full(n, self.base_score)
        self.ensemble = []
        mask = np.ones(n, dtype=bool)
        for _ in range(self.trees):
            prob = _sigmoid(margin)
            grad = prob - labels
            hess = prob * (1.0 - prob)
            root = self._build_node(features, order, grad, hess, mask, depth=0)
            self.ensemble.append(root)
            margin += self.learning_rate * self._tree_scores(root, features)
        return self

    def predict_probability(self, features: np.ndarray) -> np.ndarray:
        if not self.ensemble:
            raise FitError("classifier has not been fit")
        features = np.atleast_2d(np.asarray(features, dtype="float64"))
        features = _unit_rows(features)
        margin = np.full(features.shape[0], self.base_score)
        for tree in self.ensemble:
            margin += self.learning_rate * self._tree_scores(tree, features)
        return _sigmoid(margin)

    def to_json(self) -> dict:
        if not self.ensemble:
            raise FitError("classifier has not been fit")
        return {
            "kind": self.name,
            "trees": self.trees,
            "depth": self.depth,
            "learning_rate": self.learning_rate,
            "reg_lambda": self.reg_lambda,
            "base_score": self.base_score,
            "ensemble": self.ensemble,
        }

    @classmethod
    def from_json(cls, data: dict) -> "GBDTClassifier":
        model = cls(
            trees=int(data["trees"]),
            depth=int(data["depth"]),
            learning_rate=float(data["learning_rate"]),
            reg_lambda=float(data["reg_lambda"]),
        )
        model.base_score = float(data["base_score"])
        model.ensemble = data["ensemble"]
        return model


CLASSIFIERS = {
    LogisticClassifier.name: LogisticClassifier,
    GBDTClassifier.name: GBDTClassifier,
}


def fit_builtin_classifier(
    features: np.ndarray, labels: np.ndarray, kind: str = "logistic", seed: int = 0
):
    if kind not in CLASSIFIERS:
        raise InvalidArgumentError(
            f"unknown classifier {kind!r}; expected one of {sorted(CLASSIFIERS)}"
        )
    return CLASSIFIERS[kind]().fit(features, labels, seed=seed)


def classifier_from_json(data: dict):
    kind = data.get("kind")
    if kind not in CLASSIFIERS:
        raise InvalidArgumentError(f"unknown classifier kind {kind!r}")
    return CLASSIFIERS[kind].from_json(data)
