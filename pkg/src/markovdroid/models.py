"""The six classifiers (1/3/5-NN, DT, RF, AdaBoost), written on numpy.

Labels are 0 = benign, 1 = malicious. Every model exposes
``predict_proba(X) -> p_malicious``; the predicted label is malicious only when
p_malicious > 0.5, so exact ties go to benign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("1NN", "3NN", "5NN", "DT", "RF", "AdaBoost")

RF_TREES = 100
ADABOOST_ROUNDS = 50
_KNN_CHUNK = 16


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    label: int
    p_malicious: float

    @property
    def p_benign(self) -> float:
        return 1.0 - self.p_malicious

    def prob_of(self, label: int) -> float:
        return self.p_malicious if label == 1 else self.p_benign


def labels_from_proba(p: np.ndarray) -> np.ndarray:
    return (np.asarray(p) > 0.5).astype(np.int64)


def _check_train(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ModelError("X must be 2-D with one label per row")
    if not set(np.unique(y)) <= {0, 1}:
        raise ModelError("labels must be 0 (benign) or 1 (malicious)")
    if len(np.unique(y)) < 2:
        raise ModelError("training set must contain both classes")
    return X, y


class _Model:
    kind: str
    n_features: int

    def _check_probe(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_labels(self, X) -> np.ndarray:
        return labels_from_proba(self.predict_proba(X))


# --------------------------------------------------------------------------
# k-NN


@dataclass
class KNNModel(_Model):
    k: int
    X: np.ndarray
    y: np.ndarray

    @property
    def kind(self) -> str:
        return f"{self.k}NN"

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows; distance ties go to the earlier row."""
        X = self._check_probe(X)
        k = min(self.k, len(self.X))
        out = np.empty((len(X), k), dtype=np.int64)
        for start in range(0, len(X), _KNN_CHUNK):
            q = X[start:start + _KNN_CHUNK]
            d2 = ((q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            out[start:start + len(q)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return out

    def predict_proba(self, X) -> np.ndarray:
        return self.y[self.neighbors(X)].mean(axis=1)


# --------------------------------------------------------------------------
# CART tree


@dataclass
class Tree:
    """Flat binary tree in preorder. ``feature == -1`` marks a leaf.

    ``counts[i] = (n_benign, n_malicious)`` of the training rows reaching node i.
    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def leaf_proba(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.apply(X)].astype(np.float64)
        return c[:, 1] / c.sum(axis=1)


def best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
    """Best Gini split over the columns of X.

    Maximizes sum over children of (n_ben^2 + n_mal^2) / n_child, which is the
    same as minimizing the weighted Gini impurity. The score is one division of
    exact integers, so equal splits compare equal; ties go to the lowest
    column, then the lowest threshold. Thresholds are midpoints between
    consecutive distinct values.
    """
    n, m = X.shape
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    a_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.int64)[:, None]
    n_right = n - n_left
    b_left = n_left - a_left
    a_right = int(y.sum()) - a_left
    b_right = n_right - a_right
    num = (a_left * a_left + b_left * b_left) * n_right + (a_right * a_right + b_right * b_right) * n_left
    score = num / (n_left * n_right)
    score[xs[1:] <= xs[:-1]] = -np.inf
    flat = score.T.ravel()
    j = int(np.argmax(flat))
    if flat[j] == -np.inf:
        return None
    col, pos = divmod(j, n - 1)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr)


def grow_tree(X: np.ndarray, y: np.ndarray, max_features: int | None = None,
              rng: np.random.Generator | None = None) -> Tree:
    """Grow a Gini tree to purity (no depth cap).

    With ``max_features`` set, each node searches a random feature subset and
    falls back to all features when the subset admits no split.
    """
    d = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def build(idx: np.ndarray) -> int:
        node = len(feature)
        n_mal = int(y[idx].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append((len(idx) - n_mal, n_mal))
        if n_mal == 0 or n_mal == len(idx):
            return node
        Xn, yn = X[idx], y[idx]
        split = None
        if max_features is not None and max_features < d:
            cols = np.sort(rng.choice(d, size=max_features, replace=False))
            found = best_split(Xn[:, cols], yn)
            if found is not None:
                split = (int(cols[found[0]]), found[1])
        if split is None:
            split = best_split(Xn, yn)
        if split is None:  # identical rows with mixed labels
            return node
        f, thr = split
        mask = Xn[:, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx[mask])
        right[node] = build(idx[~mask])
        return node

    build(np.arange(len(X)))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(counts, dtype=np.int64).reshape(-1, 2))


@dataclass
class TreeModel(_Model):
    tree: Tree
    n_features: int
    kind: str = "DT"

    def predict_proba(self, X) -> np.ndarray:
        return self.tree.leaf_proba(self._check_probe(X))


@dataclass
class ForestModel(_Model):
    trees: list[Tree]
    n_features: int
    kind: str = "RF"

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_probe(X)
        return np.mean([t.leaf_proba(X) for t in self.trees], axis=0)


def fit_forest(X, y, n_trees: int = RF_TREES, max_features: int | None = -1, bootstrap: bool = True,
               seed: int = 0) -> ForestModel:
    """Bagged Gini trees. ``max_features=-1`` means ceil(sqrt(d)); None means all features."""
    X, y = _check_train(X, y)
    d = X.shape[1]
    if max_features == -1:
        max_features = math.ceil(math.sqrt(d))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        if bootstrap:
            idx = rng.integers(0, len(X), size=len(X))
            # a one-class resample cannot be split; keep it, its leaf is still a valid vote
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        trees.append(grow_tree(Xb, yb, max_features, rng))
    return ForestModel(trees, d)


# --------------------------------------------------------------------------
# AdaBoost over stumps


@dataclass
class Stump:
    feature: int
    threshold: float
    left_label: int  # +1 malicious / -1 benign
    right_label: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.feature < 0:
            return np.full(len(X), self.left_label, dtype=np.int64)
        return np.where(X[:, self.feature] <= self.threshold, self.left_label, self.right_label)


def fit_stump(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> Stump:
    """Depth-1 tree minimizing weighted error; each leaf takes its weighted majority."""
    n, d = X.shape
    wp_tot = float(w[y == 1].sum())
    wn_tot = float(w[y == 0].sum())
    const = Stump(-1, 0.0, 1 if wp_tot > wn_tot else -1, 1 if wp_tot > wn_tot else -1)
    if n < 2:
        return const
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    wpos = np.cumsum(np.where(y[order] == 1, w[order], 0.0), axis=0)[:-1]
    wneg = np.cumsum(np.where(y[order] == 0, w[order], 0.0), axis=0)[:-1]
    err = np.minimum(wpos, wneg) + np.minimum(wp_tot - wpos, wn_tot - wneg)
    err[xs[1:] <= xs[:-1]] = np.inf
    flat = err.T.ravel()
    j = int(np.argmin(flat))
    if not np.isfinite(flat[j]):
        return const
    col, pos = divmod(j, n - 1)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    left = 1 if wpos[pos, col] > wneg[pos, col] else -1
    right = 1 if wp_tot - wpos[pos, col] > wn_tot - wneg[pos, col] else -1
    return Stump(col, float(thr), left, right)


@dataclass
class AdaBoostModel(_Model):
    stumps: list[Stump]
    alphas: list[float]
    n_features: int
    kind: str = "AdaBoost"

    def margin(self, X) -> np.ndarray:
        X = self._check_probe(X)
        total = float(sum(self.alphas))
        if total <= 0:
            return np.zeros(len(X))
        votes = sum(a * s.predict(X) for a, s in zip(self.alphas, self.stumps))
        return votes / total

    def predict_proba(self, X) -> np.ndarray:
        # normalized margin in [-1, 1] mapped linearly to [0, 1]
        return (1.0 + self.margin(X)) / 2.0


def fit_adaboost(X, y, rounds: int = ADABOOST_ROUNDS) -> AdaBoostModel:
    X, y = _check_train(X, y)
    sign = np.where(y == 1, 1, -1)
    w = np.full(len(X), 1.0 / len(X))
    stumps, alphas = [], []
    for _ in range(rounds):
        stump = fit_stump(X, y, w)
        h = stump.predict(X)
        err = float(w[h != sign].sum())
        if err >= 0.5:
            break
        err = max(err, 1e-10)
        alpha = 0.5 * math.log((1.0 - err) / err)
        stumps.append(stump)
        alphas.append(alpha)
        if err <= 1e-10:
            break
        w = w * np.exp(-alpha * sign * h)
        w /= w.sum()
    return AdaBoostModel(stumps, alphas, X.shape[1])


# --------------------------------------------------------------------------
# dispatch


def fit(kind: str, X, y, seed: int = 0) -> _Model:
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    X, y = _check_train(X, y)
    if kind.endswith("NN"):
        return KNNModel(int(kind[:-2]), X.copy(), y.copy())
    if kind == "DT":
        return TreeModel(grow_tree(X, y), X.shape[1])
    if kind == "RF":
        return fit_forest(X, y, seed=seed)
    return fit_adaboost(X, y)


def predict(model: _Model, x) -> Prediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError("predict takes a single feature vector")
    p = float(model.predict_proba(x)[0])
    return Prediction(int(p > 0.5), p)


# --------------------------------------------------------------------------
# text dumps


def _tree_lines(tree: Tree, node: int = 0) -> list[str]:
    if tree.feature[node] < 0:
        n_ben, n_mal = tree.counts[node]
        return [f"leaf {n_mal} {n_ben}"]
    head = f"node {tree.feature[node]} {float(tree.threshold[node])!r}"
    return [head] + _tree_lines(tree, tree.left[node]) + _tree_lines(tree, tree.right[node])


def _tree_from_lines(lines: list[str], pos: int = 0) -> tuple[Tree, int]:
    feature, threshold, left, right, counts = [], [], [], [], []

    def build(i: int) -> tuple[int, int]:
        parts = lines[i].split()
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append([0, 0])
        if parts[0] == "leaf":
            counts[node] = [int(parts[2]), int(parts[1])]
            return node, i + 1
        if parts[0] != "node":
            raise ModelError(f"bad tree line {lines[i]!r}")
        feature[node] = int(parts[1])
        threshold[node] = float(parts[2])
        left[node], i = build(i + 1)
        right[node], i = build(i)
        counts[node] = [counts[left[node]][0] + counts[right[node]][0],
                        counts[left[node]][1] + counts[right[node]][1]]
        return node, i

    _, end = build(pos)
    tree = Tree(np.array(feature), np.array(threshold, dtype=np.float64), np.array(left), np.array(right),
                np.array(counts, dtype=np.int64).reshape(-1, 2))
    return tree, end


def dump_model(model: _Model, path) -> None:
    """Line-oriented dump; floats are written with repr so a reload is exact."""
    path = Path(path)
    lines = [f"model {model.kind} features={model.n_features}"]
    if isinstance(model, KNNModel):
        for label, row in zip(model.y, model.X):
            lines.append("row " + str(int(label)) + " " + " ".join(repr(float(v)) for v in row))
    elif isinstance(model, TreeModel):
        lines += _tree_lines(model.tree)
    elif isinstance(model, ForestModel):
        for i, tree in enumerate(model.trees):
            lines.append(f"tree {i}")
            lines += _tree_lines(tree)
    elif isinstance(model, AdaBoostModel):
        for alpha, s in zip(model.alphas, model.stumps):
            lines.append(f"stump {alpha!r}")
            if s.feature < 0:
                lines.append(f"leaf {int(s.left_label > 0)} {int(s.left_label < 0)}")
            else:
                lines.append(f"node {s.feature} {s.threshold!r}")
                for lab in (s.left_label, s.right_label):
                    lines.append(f"leaf {int(lab > 0)} {int(lab < 0)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> _Model:
    path = Path(path)
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
    head = lines[0].split()
    if head[0] != "model":
        raise ModelError(f"{path}: not a model dump")
    kind = head[1]
    d = int(head[2].split("=", 1)[1])
    if kind.endswith("NN"):
        rows = [l.split()[1:] for l in lines[1:]]
        y = np.array([int(r[0]) for r in rows], dtype=np.int64)
        X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), d)
        return KNNModel(int(kind[:-2]), X, y)
    if kind == "DT":
        tree, _ = _tree_from_lines(lines, 1)
        return TreeModel(tree, d)
    if kind == "RF":
        trees, i = [], 1
        while i < len(lines):
            tree, i = _tree_from_lines(lines, i + 1)
            trees.append(tree)
        return ForestModel(trees, d)
    if kind == "AdaBoost":
        stumps, alphas, i = [], [], 1
        while i < len(lines):
            alphas.append(float(lines[i].split()[1]))
            tree, i = _tree_from_lines(lines, i + 1)
            if tree.n_nodes == 1:
                lab = 1 if tree.counts[0, 1] else -1
                stumps.append(Stump(-1, 0.0, lab, lab))
            else:
                labs = [1 if tree.counts[c, 1] else -1 for c in (tree.left[0], tree.right[0])]
                stumps.append(Stump(int(tree.feature[0]), float(tree.threshold[0]), *labs))
        return AdaBoostModel(stumps, alphas, d)
    raise ModelError(f"{path}: unknown model kind {kind!r}")
