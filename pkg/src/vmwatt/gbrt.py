"""Gradient-boosted regression trees, written from scratch.

Squared-error CART trees with exact greedy split search, boosted on
residuals with a constant learning rate. Trees are plain dataclasses so a
model serializes to a small JSON document.

Split search sorts every feature once per training call and then only
partitions those orders as the tree grows, which keeps each level O(n) per
feature. The per-node scan and partition are compiled with numba. Candidate thresholds are midpoints between consecutive distinct
values; the best candidate maximizes the SSE decrease, with ties going to
the lowest feature index and then the lowest threshold.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np
from numba import njit

from .errors import (ConfigError, FitError, ParseError, ShapeError,
                     UnsupportedVersionError)
from .metrics import FEATURE_NAMES

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# gains within this fraction of the node SSE count as ties
_TIE_RTOL = 1e-10


@dataclass
class Leaf:
    value: float
    n_samples: int


@dataclass
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    impurity_decrease: float
    n_samples: int


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class GbrParams:
    n_trees: int = 200
    learning_rate: float = 0.1
    max_depth: int | None = 3
    min_samples_leaf: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not isinstance(self.n_trees, int) or self.n_trees < 1:
            raise ConfigError(f"n_trees must be an integer >= 1, got {self.n_trees!r}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ConfigError(f"learning_rate must lie in (0, 1], got {self.learning_rate!r}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth!r}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf!r}")


@dataclass
class GbrModel:
    baseline: float
    learning_rate: float
    trees: list[TreeNode] = field(default_factory=list)
    params: GbrParams = field(default_factory=GbrParams)
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True)
class FeatureImportances:
    feature_names: tuple[str, ...]
    percentages: tuple[float, ...]
    has_splits: bool

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.percentages))

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.as_dict().items(), key=lambda kv: -kv[1])


# -- input checks -----------------------------------------------------------

def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"features must be a 2-D matrix, got shape {X.shape}")
    if y.ndim != 1 or len(y) != len(X):
        raise ShapeError(f"targets shape {y.shape} does not match {len(X)} feature rows")
    if len(X) == 0:
        raise FitError("cannot fit on an empty dataset")
    bad = ~np.isfinite(X).all(axis=1) | ~np.isfinite(y)
    if bad.any():
        raise FitError(f"non-finite value in row {int(np.flatnonzero(bad)[0])}")
    return X, y


# -- tree growing -----------------------------------------------------------

def _presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row indices sorted by each feature, as a (n_features, n) matrix,
    plus a feature-major copy of ``X``."""
    orders = np.stack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])])
    return orders.astype(np.int64), np.ascontiguousarray(X.T)


@njit(cache=True)
def _split_kernel(XT, r, orders, min_samples_leaf, tie_rtol):
    """Best split of one node: ``(gain, feature, position)``; feature -1 if none.

    ``orders[f]`` lists the node's rows sorted by feature ``f``. The SSE
    decrease of cutting after sorted position ``i`` is
    ``(S_left - S * n_left / n)^2 * n / (n_left * n_right)`` on targets
    centred at the node mean.
    """
    p, n = orders.shape
    total = 0.0
    for i in range(n):
        total += r[orders[0, i]]
    mean = total / n
    sse = 0.0
    for i in range(n):
        d = r[orders[0, i]] - mean
        sse += d * d
    tol = tie_rtol * sse
    gains = np.full((p, n - 1), -np.inf)
    fmax = np.full(p, -np.inf)
    for f in range(p):
        tot = 0.0
        for i in range(n):
            tot += r[orders[f, i]] - mean
        cs = 0.0
        for i in range(n - 1):
            row = orders[f, i]
            cs += r[row] - mean
            nl = i + 1
            nr = n - nl
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            if not XT[f, row] < XT[f, orders[f, i + 1]]:
                continue
            d = cs - tot * nl / n
            g = d * d * n / (nl * nr)
            gains[f, i] = g
            if g > fmax[f]:
                fmax[f] = g
    best = fmax.max()
    if not best > tol:
        return best, -1, -1
    # ties: lowest feature, then lowest threshold
    for f in range(p):
        if fmax[f] >= best - tol:
            for i in range(n - 1):
                if gains[f, i] >= fmax[f] - tol:
                    return fmax[f], f, i
    return best, -1, -1


@njit(cache=True)
def _partition(XT, orders, f, thr):
    """Stable split of every feature order into rows ``<= thr`` and ``> thr``."""
    p, n = orders.shape
    n_left = 0
    for i in range(n):
        if XT[f, orders[0, i]] <= thr:
            n_left += 1
    left = np.empty((p, n_left), dtype=np.int64)
    right = np.empty((p, n - n_left), dtype=np.int64)
    for g in range(p):
        a = 0
        b = 0
        for i in range(n):
            row = orders[g, i]
            if XT[f, row] <= thr:
                left[g, a] = row
                a += 1
            else:
                right[g, b] = row
                b += 1
    return left, right


def _grow(XT, r, orders, depth, max_depth, min_samples_leaf) -> TreeNode:
    idx = orders[0]
    n = len(idx)
    vals = r[idx]
    mean = float(vals.mean())
    if (max_depth is not None and depth >= max_depth) or n < 2 * min_samples_leaf \
            or vals.min() == vals.max():
        return Leaf(mean, n)
    gain, f, pos = _split_kernel(XT, r, orders, min_samples_leaf, _TIE_RTOL)
    if f < 0:
        return Leaf(mean, n)
    lo, hi = XT[f, orders[f, pos]], XT[f, orders[f, pos + 1]]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    thr = float(thr)
    if max_depth is not None and depth + 1 >= max_depth:
        # children are leaves at the depth cap: no need to partition the orders
        goes_left = XT[f, idx] <= thr
        lv, rv = vals[goes_left], vals[~goes_left]
        left, right = Leaf(float(lv.mean()), len(lv)), Leaf(float(rv.mean()), len(rv))
    else:
        lo_orders, hi_orders = _partition(XT, orders, f, thr)
        left = _grow(XT, r, lo_orders, depth + 1, max_depth, min_samples_leaf)
        right = _grow(XT, r, hi_orders, depth + 1, max_depth, min_samples_leaf)
    return Split(int(f), thr, left, right, max(float(gain), 0.0), n)


def fit_tree(X, y, max_depth: int | None = 3, min_samples_leaf: int = 1,
             seed: int = 0) -> TreeNode:
    """Fit one squared-error regression tree.

    ``seed`` is accepted for interface symmetry; fitting is deterministic.
    """
    X, y = _check_xy(X, y)
    if min_samples_leaf < 1:
        raise ConfigError("min_samples_leaf must be >= 1")
    orders, XT = _presort(X)
    return _grow(XT, y, orders, 0, max_depth, min_samples_leaf)


def tree_predict(tree: TreeNode, x: Sequence[float]) -> float:
    node = tree
    while isinstance(node, Split):
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.value


def tree_predict_batch(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X))
    stack = [(tree, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if isinstance(node, Leaf):
            out[idx] = node.value
            continue
        m = X[idx, node.feature_index] <= node.threshold
        stack.append((node.left, idx[m]))
        stack.append((node.right, idx[~m]))
    return out


def iter_splits(tree: TreeNode) -> Iterator[Split]:
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Split):
            yield node
            stack.append(node.right)
            stack.append(node.left)


# -- boosting ---------------------------------------------------------------

def fit_gbr(X, y, params: GbrParams | None = None,
            feature_names: Sequence[str] | None = None) -> GbrModel:
    """Boost ``params.n_trees`` trees on the residuals of squared error."""
    params = params or GbrParams()
    params.validate()
    X, y = _check_xy(X, y)
    names = tuple(feature_names) if feature_names is not None else (
        FEATURE_NAMES if X.shape[1] == len(FEATURE_NAMES)
        else tuple(f"x{i}" for i in range(X.shape[1])))
    if len(names) != X.shape[1]:
        raise ShapeError(f"{len(names)} feature names for {X.shape[1]} columns")

    baseline = float(y.mean())
    orders, XT = _presort(X)
    tree_sum = np.zeros(len(X))
    trees: list[TreeNode] = []
    # residuals this small are rounding error of the targets; fitting them
    # cannot reduce the true loss, so such rounds get a zero leaf
    noise_floor = 16 * np.finfo(float).eps * max(float(np.abs(y).max()), 1.0)
    for _ in range(params.n_trees):
        residual = y - (baseline + params.learning_rate * tree_sum)
        if np.abs(residual).max() <= noise_floor:
            trees.append(Leaf(0.0, len(y)))
            continue
        tree = _grow(XT, residual, orders, 0, params.max_depth, params.min_samples_leaf)
        trees.append(tree)
        tree_sum += tree_predict_batch(tree, X)
    return GbrModel(baseline, params.learning_rate, trees, params, names)


def _check_width(model: GbrModel, X: np.ndarray) -> None:
    if X.shape[-1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} features, got {X.shape[-1]}")


def predict(model: GbrModel, X) -> np.ndarray:
    """Batch prediction: baseline + learning_rate * sum of tree outputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {X.shape}")
    _check_width(model, X)
    total = np.zeros(len(X))
    for tree in model.trees:
        total += tree_predict_batch(tree, X)
    return model.baseline + model.learning_rate * total


def gbr_predict(model: GbrModel, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"expected one feature vector, got shape {x.shape}")
    _check_width(model, x)
    return float(predict(model, x[None, :])[0])


def staged_predict(model: GbrModel, X) -> Iterator[np.ndarray]:
    """Predictions after 0, 1, ..., n_trees trees."""
    X = np.asarray(X, dtype=float)
    _check_width(model, X)
    total = np.zeros(len(X))
    yield model.baseline + model.learning_rate * total
    for tree in model.trees:
        total += tree_predict_batch(tree, X)
        yield model.baseline + model.learning_rate * total


def mdi_importances(model: GbrModel) -> FeatureImportances:
    """Mean decrease in impurity, as percentages over all trees."""
    sums = np.zeros(model.n_features)
    for tree in model.trees:
        for node in iter_splits(tree):
            sums[node.feature_index] += node.impurity_decrease
    total = sums.sum()
    if total <= 0:
        logger.warning("model has no splits; importances are all zero")
        return FeatureImportances(model.feature_names, tuple(0.0 for _ in sums), False)
    pct = 100.0 * sums / total
    return FeatureImportances(model.feature_names, tuple(float(v) for v in pct), True)


# -- serialization ----------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"value": node.value, "n_samples": node.n_samples}
    return {
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "impurity_decrease": node.impurity_decrease,
        "n_samples": node.n_samples,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d, where: str) -> TreeNode:
    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected an object")
    try:
        if "feature_index" in d:
            return Split(int(d["feature_index"]), float(d["threshold"]),
                         _node_from_dict(d["left"], where + ".left"),
                         _node_from_dict(d["right"], where + ".right"),
                         float(d["impurity_decrease"]), int(d["n_samples"]))
        return Leaf(float(d["value"]), int(d["n_samples"]))
    except KeyError as exc:
        raise ValueError(f"{where}: missing field {exc.args[0]!r}") from None


def model_to_dict(model: GbrModel) -> dict:
    hp = asdict(model.params)
    hp.pop("learning_rate")
    return {
        "version": MODEL_FORMAT_VERSION,
        "feature_names": list(model.feature_names),
        "baseline": model.baseline,
        "learning_rate": model.learning_rate,
        "hyperparameters": hp,
        "trees": [_node_to_dict(t) for t in model.trees],
    }


def dumps_model(model: GbrModel) -> str:
    return json.dumps(model_to_dict(model), separators=(",", ":")) + "\n"


def save_model(model: GbrModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def model_from_dict(doc: dict, path="<model>") -> GbrModel:
    if not isinstance(doc, dict):
        raise ParseError(path, 1, "model file must hold a JSON object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported model format version {version!r} "
            f"(this build reads version {MODEL_FORMAT_VERSION})"
        )
    try:
        hp = dict(doc["hyperparameters"])
        lr = float(doc["learning_rate"])
        params = GbrParams(n_trees=int(hp["n_trees"]), learning_rate=lr,
                           max_depth=None if hp.get("max_depth") is None else int(hp["max_depth"]),
                           min_samples_leaf=int(hp.get("min_samples_leaf", 1)),
                           seed=int(hp.get("seed", 0)))
        trees = [_node_from_dict(t, f"trees[{i}]") for i, t in enumerate(doc["trees"])]
        names = tuple(str(n) for n in doc["feature_names"])
        baseline = float(doc["baseline"])
    except KeyError as exc:
        raise ParseError(path, None, f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(path, None, str(exc)) from None
    model = GbrModel(baseline, lr, trees, params, names)
    for i, tree in enumerate(trees):
        for node in iter_splits(tree):
            if not 0 <= node.feature_index < len(names):
                raise ParseError(path, None, f"trees[{i}]: feature_index {node.feature_index} out of range")
    if not all(math.isfinite(v) for v in (baseline, lr)):
        raise ParseError(path, None, "non-finite baseline or learning_rate")
    return model


def load_model(path: str | Path) -> GbrModel:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ParseError(path, 1, "empty model file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"column {exc.colno}: {exc.msg}") from None
    return model_from_dict(doc, path)
