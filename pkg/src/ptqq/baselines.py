"""Classical baseline classifiers: one-vs-rest SVM and a random forest.

The SVM solves each binary dual by sequential minimal optimization with
maximal-violating-pair working-set selection; the forest grows bagged CART
trees on Gini impurity.  Both are deliberately dependency-free so the
comparison protocol is self-contained.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import rng
from .learn import macro_f1

KKT_TOL = 1e-3

SVM_GRID_DEFAULT = {"C": [0.1, 1.0, 10.0, 100.0],
                    "kernel": ["linear", "rbf"],
                    "gamma": [0.01, 0.1, 1.0]}
RF_GRID_DEFAULT = {"n_trees": [100, 300], "max_depth": [8, 16, None]}


# ---------------------------------------------------------------------------
# SVM

def _kernel_matrix(xa, xb, kernel, gamma):
    if kernel == "linear":
        return xa @ xb.T
    if kernel == "rbf":
        sq = (np.sum(xa ** 2, axis=1)[:, None] + np.sum(xb ** 2, axis=1)[None, :]
              - 2.0 * xa @ xb.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


def _smo_binary(k_mat, y, c_reg, tol=KKT_TOL, max_iter=200_000):
    """Solve the binary SVM dual on a precomputed kernel matrix.

    Working-set selection picks the maximal violating pair; terminates when
    the KKT gap m - M drops below tol.  Returns (alpha, b).
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective, Q alpha - e
    yk = y.astype(np.float64)

    for _ in range(max_iter):
        ng = -yk * grad
        up = ((yk > 0) & (alpha < c_reg)) | ((yk < 0) & (alpha > 0))
        low = ((yk < 0) & (alpha < c_reg)) | ((yk > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = np.argmax(np.where(up, ng, -np.inf))
        j = np.argmin(np.where(low, ng, np.inf))
        m_up, m_low = ng[i], ng[j]
        if m_up - m_low <= tol:
            break

        quad = k_mat[i, i] + k_mat[j, j] - 2.0 * k_mat[i, j]
        if quad <= 1e-12:
            quad = 1e-12
        # unconstrained step along the feasible pair direction
        delta = (m_up - m_low) / quad

        # box clipping in terms of alpha_i, alpha_j
        if yk[i] > 0:
            delta = min(delta, c_reg - alpha[i])
        else:
            delta = min(delta, alpha[i])
        if yk[j] > 0:
            delta = min(delta, alpha[j])
        else:
            delta = min(delta, c_reg - alpha[j])
        if delta <= 0:
            break

        alpha[i] += yk[i] * delta
        alpha[j] -= yk[j] * delta
        grad += delta * yk * (k_mat[:, i] - k_mat[:, j])
    ng = -yk * grad
    up = ((yk > 0) & (alpha < c_reg)) | ((yk < 0) & (alpha > 0))
    low = ((yk < 0) & (alpha < c_reg)) | ((yk > 0) & (alpha > 0))
    hi = np.max(np.where(up, ng, -np.inf)) if up.any() else 0.0
    lo = np.min(np.where(low, ng, np.inf)) if low.any() else 0.0
    b = (hi + lo) / 2.0
    return alpha, b


@dataclass
class SvmModel:
    classes: tuple
    kernel: str
    gamma: float
    c_reg: float
    support_x: list = field(default_factory=list)     # per class
    dual_coef: list = field(default_factory=list)     # alpha_i * y_i on supports
    intercepts: list = field(default_factory=list)
    mean: np.ndarray = None
    std: np.ndarray = None

    def decision(self, x):
        x = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        cols = []
        for sx, coef, b in zip(self.support_x, self.dual_coef, self.intercepts):
            k = _kernel_matrix(x, sx, self.kernel, self.gamma)
            cols.append(k @ coef + b)
        return np.stack(cols, axis=1)

    def predict(self, x):
        idx = np.argmax(self.decision(x), axis=1)
        return np.array([self.classes[i] for i in idx])


def train_svm(features_mat, labels, C=1.0, kernel="rbf", gamma=0.1):
    """One-vs-rest SVM with per-feature standardization from the train split."""
    x = np.asarray(features_mat, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite features")
    labels = np.asarray(labels)
    classes = tuple(sorted(set(int(v) for v in labels)))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    xs = (x - mean) / std
    k_mat = _kernel_matrix(xs, xs, kernel, gamma)

    model = SvmModel(classes, kernel, gamma, C, mean=mean, std=std)
    for c in classes:
        y = np.where(labels == c, 1.0, -1.0)
        alpha, b = _smo_binary(k_mat, y, C)
        sv = alpha > 1e-10
        model.support_x.append(xs[sv])
        model.dual_coef.append(alpha[sv] * y[sv])
        model.intercepts.append(b)
    return model


# ---------------------------------------------------------------------------
# random forest

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: object = None
    right: object = None
    histogram: np.ndarray = None  # class counts at a leaf


def _gini_best_split(x, y_idx, n_classes, feat_ids):
    """Best (feature, threshold, gain) over the candidate features."""
    n = len(y_idx)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx] = 1.0
    total = onehot.sum(axis=0)
    gini_parent = 1.0 - np.sum((total / n) ** 2)

    best = (None, 0.0, 0.0)
    for f in feat_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        cum = np.cumsum(onehot[order], axis=0)
        # candidate cuts between distinct consecutive values
        valid = np.where(xs[1:] > xs[:-1])[0]
        if valid.size == 0:
            continue
        n_l = valid + 1.0
        n_r = n - n_l
        left = cum[valid]
        right = total[None, :] - left
        g_l = 1.0 - np.sum((left / n_l[:, None]) ** 2, axis=1)
        g_r = 1.0 - np.sum((right / n_r[:, None]) ** 2, axis=1)
        gain = gini_parent - (n_l * g_l + n_r * g_r) / n
        pick = np.argmax(gain)
        if gain[pick] > best[2] + 1e-12:
            best = (f, 0.5 * (xs[valid[pick]] + xs[valid[pick] + 1]), gain[pick])
    return best


def _grow_tree(x, y_idx, n_classes, g, max_depth, max_features, depth=0):
    hist = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    if (max_depth is not None and depth >= max_depth) or len(y_idx) < 2 \
            or np.count_nonzero(hist) == 1:
        return TreeNode(histogram=hist)
    feat_ids = g.choice(x.shape[1], size=max_features, replace=False)
    feature, threshold, gain = _gini_best_split(x, y_idx, n_classes, feat_ids)
    if feature is None or gain <= 0.0:
        return TreeNode(histogram=hist)
    go_left = x[:, feature] <= threshold
    node = TreeNode(feature=int(feature), threshold=float(threshold))
    node.left = _grow_tree(x[go_left], y_idx[go_left], n_classes, g,
                           max_depth, max_features, depth + 1)
    node.right = _grow_tree(x[~go_left], y_idx[~go_left], n_classes, g,
                            max_depth, max_features, depth + 1)
    return node


def _tree_histogram(node, x):
    """Leaf histogram for each row of x."""
    out = np.empty((len(x), len(_first_leaf(node).histogram)))
    stack = [(node, np.arange(len(x)))]
    while stack:
        nd, idx = stack.pop()
        if nd.feature < 0:
            out[idx] = nd.histogram
            continue
        mask = x[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


def _first_leaf(node):
    while node.feature >= 0:
        node = node.left
    return node


@dataclass
class ForestModel:
    classes: tuple
    trees: list
    bootstrap_seeds: list
    oob_score: float = None

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        votes = np.zeros((len(x), len(self.classes)))
        for tree in self.trees:
            hist = _tree_histogram(tree, x)
            votes[np.arange(len(x)), np.argmax(hist, axis=1)] += 1.0
        idx = np.argmax(votes, axis=1)
        return np.array([self.classes[i] for i in idx])


def train_rf(features_mat, labels, n_trees=100, max_depth=None, seed=0,
             max_features="sqrt"):
    """Bagged CART trees with Gini splits and majority vote."""
    x = np.asarray(features_mat, dtype=np.float64)
    labels = np.asarray(labels)
    classes = tuple(sorted(set(int(v) for v in labels)))
    if len(classes) < 2:
        raise ValueError("need at least two classes to grow a forest")
    lut = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([lut[int(v)] for v in labels])
    n, n_feat = x.shape
    if max_features == "sqrt":
        m_feat = max(1, int(np.sqrt(n_feat)))
    else:
        m_feat = int(max_features)

    trees, seeds = [], []
    oob_votes = np.zeros((n, len(classes)))
    for t in range(n_trees):
        g = rng.stream(seed, 100 + t)
        seeds.append(100 + t)
        boot = g.integers(0, n, n)
        trees.append(_grow_tree(x[boot], y_idx[boot], len(classes), g,
                                max_depth, m_feat))
        oob = np.setdiff1d(np.arange(n), boot, assume_unique=False)
        if oob.size:
            hist = _tree_histogram(trees[-1], x[oob])
            oob_votes[oob, np.argmax(hist, axis=1)] += 1.0

    covered = oob_votes.sum(axis=1) > 0
    oob_score = float(np.mean(np.argmax(oob_votes[covered], axis=1) == y_idx[covered])) \
        if covered.any() else None
    return ForestModel(classes, trees, seeds, oob_score)


# ---------------------------------------------------------------------------
# grid search

def _expand_grid(grid):
    """Concrete hyperparameter points; linear kernel drops the gamma axis."""
    if not grid:
        return []
    keys = sorted(grid)
    points = []
    for combo in product(*(grid[k] for k in keys)):
        pt = dict(zip(keys, combo))
        if pt.get("kernel") == "linear":
            pt.pop("gamma", None)
        if pt not in points:
            points.append(pt)
    return points


def _complexity(pt):
    # tie-break: prefer smaller models
    return (pt.get("C", 0.0), pt.get("n_trees", 0),
            np.inf if pt.get("max_depth", 0) is None else pt.get("max_depth", 0))


def grid_search(trainer, features_mat, labels, grid, folds=3, seed=0):
    """Exhaustive cross-validated search; best point by mean validation Macro-F1.

    trainer(x, y, **point) must return a model with .predict.  Returns
    (best_point, cv_table) where the table has one row per (point, fold).
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    points = _expand_grid(grid)
    if not points:
        raise ValueError("empty grid")
    x = np.asarray(features_mat, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = len(set(int(v) for v in labels))
    lut = {c: i for i, c in enumerate(sorted(set(int(v) for v in labels)))}
    y_idx = np.array([lut[int(v)] for v in labels])

    g = rng.stream(seed, 31)
    assignment = g.permutation(len(labels)) % folds
    table = []
    scores = np.zeros(len(points))
    for p_i, pt in enumerate(points):
        fold_scores = []
        for f in range(folds):
            tr = assignment != f
            va = ~tr
            model = trainer(x[tr], labels[tr], **pt)
            pred = model.predict(x[va])
            pred_idx = np.array([lut[int(v)] for v in pred])
            score = macro_f1(y_idx[va], pred_idx, n_classes)
            fold_scores.append(score)
            table.append({"point": dict(pt), "fold": f, "macro_f1": score})
        scores[p_i] = np.mean(fold_scores)

    best_score = scores.max()
    candidates = [p for p, s in zip(points, scores) if s >= best_score - 1e-12]
    best = min(candidates, key=_complexity)
    return best, table
