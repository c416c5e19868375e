"""Regression estimators: CART trees, random forests, boosting, stacking.

Everything follows the scikit-learn protocol (``get_params``/``fit``/
``predict``, learned attributes with a trailing underscore) so the estimators
compose with ``sklearn.base.clone`` and model-selection tooling. The tree and
ensemble algorithms themselves are implemented here, not delegated.

Split search uses variance reduction. For a candidate putting ``nL`` of the
node's ``n`` rows left, the gain is equivalent to::

    sumL^2 / nL + sumR^2 / nR - sum^2 / n

Candidates are midpoints between consecutive distinct sorted values of a
feature; ties resolve to the lowest feature index, then lowest threshold.
"""

from __future__ import annotations

import json
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone

from .errors import DataError, FormatError, ParameterError

MODEL_FORMAT = "bhmodel/1"


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _as_matrix(X) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("feature matrix contains non-finite values")
    return arr


def _as_target(y, n: int) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise DataError(f"target length {arr.shape[0]} does not match {n} rows")
    if not np.isfinite(arr).all():
        raise DataError("target contains non-finite values")
    return arr


@dataclass
class TreeArrays:
    """Flat node storage: ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.float64)
        while True:
            feats = self.feature[idx]
            active = np.flatnonzero(feats >= 0)
            if active.size == 0:
                break
            node = idx[active]
            xv = X[active, feats[active]]
            goes_left = xv <= self.threshold[node]
            idx[active] = np.where(goes_left, self.left[node], self.right[node])
        return self.value[idx]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                for child in (self.left[i], self.right[i]):
                    depths[child] = depths[i] + 1
        return int(depths.max())


def _best_split(X, y, rows, feats, min_leaf):
    """Best (feature, threshold, gain) at a node, or None when no split helps."""
    m = rows.size
    sub = X[np.ix_(rows, feats)]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = y[rows][order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    sum_left = csum[:-1]
    with np.errstate(invalid="ignore"):
        gain = (
            sum_left**2 / n_left
            + (total - sum_left) ** 2 / (m - n_left)
            - total**2 / m
        )
    ok = xs[1:] > xs[:-1]
    counts = np.arange(1, m)[:, None]
    ok &= (counts >= min_leaf) & ((m - counts) >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    # Feature-major flattening makes argmax honor the documented tie-break:
    # lowest feature index first, then lowest threshold.
    flat = gain.T.ravel()
    best = int(np.argmax(flat))
    if not (flat[best] > 0.0):
        return None
    f_local, pos = divmod(best, m - 1)
    threshold = 0.5 * (xs[pos, f_local] + xs[pos + 1, f_local])
    return int(feats[f_local]), float(threshold), float(flat[best])


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    mtry: int,
    min_leaf: int,
    max_depth: int | None,
) -> TreeArrays:
    """Depth-first CART growth on the given sample.

    A node becomes a leaf when it has fewer than ``2 * min_leaf`` rows, sits
    at ``max_depth``, its targets are all equal, or no candidate split has
    positive gain. With ``mtry`` below the feature count, each node draws its
    candidate features without replacement from ``rng``.
    """
    n, p = X.shape
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        count.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(np.arange(n), 0, root)]
    while stack:
        rows, depth, slot = stack.pop()
        ys = y[rows]
        value[slot] = float(np.mean(ys))
        count[slot] = int(rows.size)
        if rows.size < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if np.ptp(ys) == 0.0:
            continue
        if mtry < p:
            feats = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            feats = np.arange(p)
        found = _best_split(X, y, rows, feats, min_leaf)
        if found is None:
            continue
        f, thr, _ = found
        goes_left = X[rows, f] <= thr
        left_rows = rows[goes_left]
        right_rows = rows[~goes_left]
        if left_rows.size == 0 or right_rows.size == 0:
            continue
        feature[slot] = f
        threshold[slot] = thr
        lslot = new_node()
        rslot = new_node()
        left[slot] = lslot
        right[slot] = rslot
        # Right pushed first so the left child is processed (and numbered)
        # in a fixed order regardless of data.
        stack.append((right_rows, depth + 1, rslot))
        stack.append((left_rows, depth + 1, lslot))
    return TreeArrays(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        n=np.asarray(count, dtype=np.int32),
    )


def _check_fitted(est, attr="trees_"):
    if not hasattr(est, attr):
        raise DataError(f"{type(est).__name__} is not fitted")


def _validate_common(min_leaf, mtry, p):
    if min_leaf < 1:
        raise ParameterError(f"min_leaf must be >= 1, got {min_leaf}")
    if mtry is not None and not (1 <= mtry <= p):
        raise ParameterError(f"mtry must be in [1, {p}], got {mtry}")


class RegressionTree(BaseEstimator, RegressorMixin):
    """A single CART regression tree.

    Parameters
    ----------
    max_depth : int or None
        Depth cap; ``None`` grows until the leaf-size rule stops.
    min_leaf : int
        Minimum rows on each side of a split.
    mtry : int or None
        Candidate features per split; ``None`` considers all.
    seed : int
        Drives the per-split feature subsampling when ``mtry`` is set.
    """

    def __init__(self, max_depth=None, min_leaf=5, mtry=None, seed=0):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.seed = seed

    def fit(self, X, y):
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        n, p = X.shape
        _validate_common(self.min_leaf, self.mtry, p)
        if n < max(2 * self.min_leaf, 2):
            raise DataError(
                f"need at least {max(2 * self.min_leaf, 2)} rows to fit, got {n}"
            )
        mtry = p if self.mtry is None else self.mtry
        self.tree_ = grow_tree(X, y, _rng(self.seed), mtry, self.min_leaf, self.max_depth)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        _check_fitted(self, "tree_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return self.tree_.predict(X)


OOBResult = namedtuple("OOBResult", ["mse", "n_used", "n_skipped"])


class RandomForest(BaseEstimator, RegressorMixin):
    """Bagged CART trees with per-split feature subsampling.

    Each tree ``t`` draws its bootstrap and split features from an
    independent generator seeded by ``(seed, t)``, so adding trees never
    changes existing ones and refits are bit-reproducible.

    Parameters
    ----------
    n_trees : int
    mtry : int or None
        Features tried per split; ``None`` uses ``ceil(p / 3)``.
    min_leaf : int
    max_depth : int or None
    seed : int
    """

    def __init__(self, n_trees=500, mtry=None, min_leaf=5, max_depth=None, seed=0):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y, bootstrap_indices=None):
        """Fit; ``bootstrap_indices`` (list of index arrays) is a test hook
        replacing the per-tree bootstrap draw."""
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        n, p = X.shape
        if self.n_trees < 1:
            raise ParameterError(f"n_trees must be >= 1, got {self.n_trees}")
        _validate_common(self.min_leaf, self.mtry, p)
        if n < max(2 * self.min_leaf, 2):
            raise DataError(
                f"need at least {max(2 * self.min_leaf, 2)} rows to fit, got {n}"
            )
        if bootstrap_indices is not None and len(bootstrap_indices) != self.n_trees:
            raise ParameterError("bootstrap_indices must supply one array per tree")
        mtry = int(math.ceil(p / 3)) if self.mtry is None else self.mtry
        trees = []
        boots = []
        for t in range(self.n_trees):
            rng = _rng(self.seed, t)
            if bootstrap_indices is None:
                boot = rng.integers(0, n, size=n)
            else:
                boot = np.asarray(bootstrap_indices[t], dtype=np.int64)
                if boot.size == 0 or boot.min() < 0 or boot.max() >= n:
                    raise ParameterError(f"bootstrap for tree {t} is out of range")
            trees.append(
                grow_tree(X[boot], y[boot], rng, mtry, self.min_leaf, self.max_depth)
            )
            boots.append(boot)
        self.trees_ = trees
        self.bootstrap_ = boots
        self.n_features_in_ = p
        self.n_rows_ = n
        self.mtry_ = mtry
        return self

    def predict(self, X):
        _check_fitted(self)
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        acc = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees_:
            acc += tree.predict(X)
        return acc / len(self.trees_)


def oob_error(forest: RandomForest, X, y) -> OOBResult:
    """Out-of-bag MSE: each row judged only by trees that never sampled it."""
    _check_fitted(forest)
    X = _as_matrix(X)
    y = _as_target(y, X.shape[0])
    n = X.shape[0]
    if n != forest.n_rows_:
        raise DataError("out-of-bag scoring needs the exact training table")
    sums = np.zeros(n, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for tree, boot in zip(forest.trees_, forest.bootstrap_):
        oob = np.ones(n, dtype=bool)
        oob[boot] = False
        if not oob.any():
            continue
        sums[oob] += tree.predict(X[oob])
        counts[oob] += 1
    used = counts > 0
    if not used.any():
        raise DataError("no row was ever out of bag; cannot estimate OOB error")
    preds = sums[used] / counts[used]
    mse = float(np.mean((y[used] - preds) ** 2))
    return OOBResult(mse=mse, n_used=int(used.sum()), n_skipped=int(n - used.sum()))


def rf_variable_importance(forest: RandomForest, X, y, repeats=1, seed=0) -> np.ndarray:
    """Permutation importance accumulated tree by tree over out-of-bag rows.

    For tree ``t`` with out-of-bag error ``B_o``, permuting feature ``j``
    within the tree's out-of-bag rows gives ``B_n``; the importance of ``j``
    is the mean of ``B_n - B_o`` over trees (averaged over ``repeats``
    permutations). A feature no tree ever splits on scores exactly 0.
    """
    _check_fitted(forest)
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    X = _as_matrix(X)
    y = _as_target(y, X.shape[0])
    n, p = X.shape
    vi = np.zeros(p, dtype=np.float64)
    n_seen = 0
    for t, (tree, boot) in enumerate(zip(forest.trees_, forest.bootstrap_)):
        oob = np.ones(n, dtype=bool)
        oob[boot] = False
        m = int(oob.sum())
        if m == 0:
            continue
        n_seen += 1
        Xo = X[oob].copy()
        yo = y[oob]
        base = float(np.mean((yo - tree.predict(Xo)) ** 2))
        used = set(int(f) for f in tree.feature if f >= 0)
        for j in range(p):
            if j not in used:
                continue
            original = Xo[:, j].copy()
            acc = 0.0
            for r in range(repeats):
                perm = _rng(seed, t, j, r).permutation(m)
                Xo[:, j] = original[perm]
                acc += float(np.mean((yo - tree.predict(Xo)) ** 2))
            Xo[:, j] = original
            vi[j] += acc / repeats - base
    if n_seen == 0:
        raise DataError("no tree had out-of-bag rows; cannot score importance")
    return vi / n_seen


class GradientBoosted(BaseEstimator, RegressorMixin):
    """Least-squares gradient boosting with shallow CART stages.

    Stage ``k`` fits a tree to the current residuals and the model adds
    ``shrinkage`` times its prediction, so training MSE never increases.
    """

    def __init__(self, n_stages=200, shrinkage=0.1, max_depth=3, min_leaf=5, seed=0):
        self.n_stages = n_stages
        self.shrinkage = shrinkage
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, X, y):
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        if self.n_stages < 1:
            raise ParameterError(f"n_stages must be >= 1, got {self.n_stages}")
        if not (0.0 < self.shrinkage <= 1.0):
            raise ParameterError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        _validate_common(self.min_leaf, None, X.shape[1])
        if X.shape[0] < max(2 * self.min_leaf, 2):
            raise DataError("too few rows for the requested min_leaf")
        self.init_ = float(np.mean(y))
        residual = y - self.init_
        stages = []
        for k in range(self.n_stages):
            tree = grow_tree(
                X, residual, _rng(self.seed, k), X.shape[1], self.min_leaf, self.max_depth
            )
            step = tree.predict(X)
            residual = residual - self.shrinkage * step
            stages.append((tree, self.shrinkage))
        self.stages_ = stages
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        _check_fitted(self, "stages_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        acc = np.full(X.shape[0], self.init_, dtype=np.float64)
        for tree, shrink in self.stages_:
            acc += shrink * tree.predict(X)
        return acc


class LinearModel(BaseEstimator, RegressorMixin):
    """Ordinary least squares by normal equations.

    An exactly singular (or numerically hopeless) normal matrix falls back to
    ridge with lambda 1e-8 and sets ``ridge_fallback_``.
    """

    def __init__(self):
        pass

    def fit(self, X, y):
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        n, p = X.shape
        if n <= p:
            raise DataError(f"OLS needs more rows than features, got {n} rows x {p}")
        A = np.hstack([X, np.ones((n, 1))])
        G = A.T @ A
        b = A.T @ y
        self.ridge_fallback_ = False
        try:
            coef = np.linalg.solve(G, b)
        except np.linalg.LinAlgError:
            self.ridge_fallback_ = True
            coef = np.linalg.solve(G + 1e-8 * np.eye(p + 1), b)
        self.coef_ = coef[:-1]
        self.intercept_ = float(coef[-1])
        self.n_features_in_ = p
        return self

    def predict(self, X):
        _check_fitted(self, "coef_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X @ self.coef_ + self.intercept_


class KNNRegressor(BaseEstimator, RegressorMixin):
    """k-nearest-neighbor mean over standardized Euclidean distance.

    Ties at the k-th distance resolve to the lowest training row index.
    """

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y):
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        if not (1 <= self.k <= X.shape[0]):
            raise ParameterError(f"k must be in [1, {X.shape[0]}], got {self.k}")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.X_ = (X - self.mean_) / self.scale_
        self.y_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        _check_fitted(self, "X_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        Q = (X - self.mean_) / self.scale_
        out = np.empty(Q.shape[0], dtype=np.float64)
        train_sq = (self.X_**2).sum(axis=1)
        chunk = max(1, int(2_000_000 / max(1, self.X_.shape[0])))
        for s in range(0, Q.shape[0], chunk):
            block = Q[s : s + chunk]
            d2 = (block**2).sum(axis=1)[:, None] + train_sq[None, :]
            d2 -= 2.0 * (block @ self.X_.T)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[s : s + chunk] = self.y_[nearest].mean(axis=1)
        return out


class StackedRegressor(BaseEstimator, RegressorMixin):
    """Two-level stacking: out-of-fold base predictions feed a linear meta model.

    Base estimators are cloned per fold, their out-of-fold predictions form
    the meta design matrix, the meta model is least squares (ridge 1e-6 when
    the normal matrix is singular, flagged by ``meta_ridge_used_``), and the
    bases are refit on the full data for prediction.
    """

    def __init__(self, bases=None, folds=5, seed=0):
        self.bases = bases
        self.folds = folds
        self.seed = seed

    def fit(self, X, y):
        X = _as_matrix(X)
        y = _as_target(y, X.shape[0])
        n = X.shape[0]
        bases = list(self.bases or [])
        if len(bases) < 2:
            raise ParameterError("stacking needs at least 2 base estimators")
        if self.folds < 2:
            raise ParameterError(f"folds must be >= 2, got {self.folds}")
        if n < self.folds:
            raise DataError(f"need at least {self.folds} rows for {self.folds} folds")
        perm = _rng(self.seed).permutation(n)
        fold_of = np.empty(n, dtype=np.int64)
        for f, chunk in enumerate(np.array_split(perm, self.folds)):
            fold_of[chunk] = f
        Z = np.zeros((n, len(bases)), dtype=np.float64)
        for f in range(self.folds):
            val = fold_of == f
            if not val.any() or val.all():
                raise DataError("a stacking fold came out empty")
            for b, (_, base) in enumerate(bases):
                est = clone(base).fit(X[~val], y[~val])
                Z[val, b] = est.predict(X[val])
        A = np.hstack([Z, np.ones((n, 1))])
        G = A.T @ A
        rhs = A.T @ y
        self.meta_ridge_used_ = False
        try:
            coef = np.linalg.solve(G, rhs)
        except np.linalg.LinAlgError:
            self.meta_ridge_used_ = True
            coef = np.linalg.solve(G + 1e-6 * np.eye(G.shape[0]), rhs)
        self.meta_coef_ = coef[:-1]
        self.meta_intercept_ = float(coef[-1])
        self.fitted_bases_ = [(name, clone(base).fit(X, y)) for name, base in bases]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        _check_fitted(self, "fitted_bases_")
        X = _as_matrix(X)
        cols = [est.predict(X) for _, est in self.fitted_bases_]
        Z = np.column_stack(cols)
        return Z @ self.meta_coef_ + self.meta_intercept_


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _tree_to_dict(tree: TreeArrays) -> dict:
    return {
        "nodes": {
            "feature": tree.feature.tolist(),
            "threshold": tree.threshold.tolist(),
            "left": tree.left.tolist(),
            "right": tree.right.tolist(),
            "value": tree.value.tolist(),
            "n": tree.n.tolist(),
        }
    }


def _tree_from_dict(obj: dict) -> TreeArrays:
    try:
        nodes = obj["nodes"]
        tree = TreeArrays(
            feature=np.asarray(nodes["feature"], dtype=np.int32),
            threshold=np.asarray(nodes["threshold"], dtype=np.float64),
            left=np.asarray(nodes["left"], dtype=np.int32),
            right=np.asarray(nodes["right"], dtype=np.int32),
            value=np.asarray(nodes["value"], dtype=np.float64),
            n=np.asarray(nodes["n"], dtype=np.int32),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed tree payload: {exc}") from None
    sizes = {len(nodes[k]) for k in ("feature", "threshold", "left", "right", "value", "n")}
    if len(sizes) != 1:
        raise FormatError("tree node arrays differ in length")
    return tree


def model_to_dict(model, features=None, target=None) -> dict:
    """JSON-ready payload for a fitted tree or forest.

    ``features`` (column names in model order) and ``target`` travel with the
    file so prediction can name what it needs.
    """
    if isinstance(model, RandomForest):
        _check_fitted(model)
        out = {
            "format": MODEL_FORMAT,
            "kind": "forest",
            "params": {
                "n_trees": model.n_trees,
                "mtry": model.mtry,
                "min_leaf": model.min_leaf,
                "max_depth": model.max_depth,
                "seed": model.seed,
            },
            "trees": [_tree_to_dict(t) for t in model.trees_],
            "bootstrap": [b.tolist() for b in model.bootstrap_],
            "n_rows": model.n_rows_,
            "n_features": model.n_features_in_,
        }
    elif isinstance(model, RegressionTree):
        _check_fitted(model, "tree_")
        out = {
            "format": MODEL_FORMAT,
            "kind": "tree",
            "params": {
                "max_depth": model.max_depth,
                "min_leaf": model.min_leaf,
                "mtry": model.mtry,
                "seed": model.seed,
            },
            "trees": [_tree_to_dict(model.tree_)],
            "n_features": model.n_features_in_,
        }
    else:
        raise ParameterError(
            f"only trees and forests can be serialized, not {type(model).__name__}"
        )
    if features is not None:
        out["features"] = list(features)
    if target is not None:
        out["target"] = target
    return out


def model_from_dict(obj: dict):
    """Rebuild a fitted estimator; returns (model, features, target)."""
    if not isinstance(obj, dict):
        raise FormatError("model payload must be a JSON object")
    if obj.get("format") != MODEL_FORMAT:
        raise FormatError(
            f"unsupported model format {obj.get('format')!r}, expected {MODEL_FORMAT!r}"
        )
    kind = obj.get("kind")
    trees = [_tree_from_dict(t) for t in obj.get("trees", [])]
    if not trees:
        raise FormatError("model payload has no trees")
    params = obj.get("params", {})
    n_features = obj.get("n_features")
    if n_features is None:
        raise FormatError("model payload lacks n_features")
    if kind == "forest":
        model = RandomForest(**params)
        boots = obj.get("bootstrap")
        if boots is None or len(boots) != len(trees):
            raise FormatError("forest payload needs one bootstrap per tree")
        model.trees_ = trees
        model.bootstrap_ = [np.asarray(b, dtype=np.int64) for b in boots]
        model.n_features_in_ = int(n_features)
        model.n_rows_ = int(obj.get("n_rows", 0))
        p = model.n_features_in_
        model.mtry_ = int(math.ceil(p / 3)) if params.get("mtry") is None else params["mtry"]
    elif kind == "tree":
        if len(trees) != 1:
            raise FormatError("tree payload must contain exactly one tree")
        model = RegressionTree(**params)
        model.tree_ = trees[0]
        model.n_features_in_ = int(n_features)
    else:
        raise FormatError(f"unknown model kind {kind!r}")
    return model, obj.get("features"), obj.get("target")


def save_model(model, path, features=None, target=None) -> None:
    payload = model_to_dict(model, features=features, target=target)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}", offset=exc.pos) from None
    return model_from_dict(obj)
