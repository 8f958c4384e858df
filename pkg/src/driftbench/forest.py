"""Random-forest regression built from scratch on CART trees.

Trees are grown greedily by variance reduction over a random feature
subset of size ceil(k/3) per node, with candidate thresholds at midpoints
between consecutive distinct sorted values. Each tree trains on a
bootstrap resample whose seed derives deterministically from the forest
seed, so fitting is reproducible and schedule-independent.

The hot loops (tree growth, tree traversal) are numba-compiled; the
algorithms themselves are implemented here, not delegated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .seeding import derive_seed

MIN_SAMPLES_SPLIT = 2

_UNBOUNDED = -1  # kernel sentinel for "no depth limit"


@dataclass(frozen=True)
class Hyperparams:
    """Tunable forest settings: ensemble size and depth cap (None = unbounded)."""

    n_estimators: int
    max_depth: int | None = None

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 when bounded")

    @property
    def depth_sort_key(self) -> float:
        """Bounded depths order naturally; unbounded sorts after every bound."""
        return math.inf if self.max_depth is None else float(self.max_depth)

    def to_dict(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(n_estimators=d["n_estimators"], max_depth=d.get("max_depth"))


@dataclass(frozen=True)
class TreeNode:
    """Object view of one node: internal (feature/threshold/children) or leaf."""

    value: float | None = None
    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None


@dataclass(frozen=True)
class FlatTree:
    """Array-encoded tree: node i is internal iff feature[i] >= 0."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def root(self) -> TreeNode:
        """Build the nested TreeNode view (used by serialization and tests)."""

        def build(i: int) -> TreeNode:
            if self.feature[i] < 0:
                return TreeNode(value=float(self.value[i]))
            return TreeNode(
                feature_index=int(self.feature[i]),
                threshold=float(self.threshold[i]),
                left=build(int(self.left[i])),
                right=build(int(self.right[i])),
            )

        return build(0)

    def depth(self) -> int:
        """Maximum root-to-leaf edge count."""
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.feature[i] < 0:
                best = max(best, d)
            else:
                stack.append((int(self.left[i]), d + 1))
                stack.append((int(self.right[i]), d + 1))
        return best


@dataclass(frozen=True)
class ForestModel:
    """Fitted ensemble plus the settings and seed that produced it."""

    trees: tuple[FlatTree, ...]
    hyperparams: Hyperparams
    seed: int
    n_features: int

    def __post_init__(self) -> None:
        if len(self.trees) != self.hyperparams.n_estimators:
            raise ValueError("tree count does not match n_estimators")


@njit(cache=True)
def _grow_tree(X, y, max_depth, mtry, seed, bootstrap):  # pragma: no cover - jit
    n_total, k = X.shape
    np.random.seed(seed)
    if bootstrap:
        order = np.random.randint(0, n_total, n_total)
    else:
        order = np.arange(n_total)
    n = order.shape[0]
    max_nodes = 2 * n
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)

    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    featbuf = np.empty(k, np.int64)
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo

        s1 = 0.0
        s2 = 0.0
        for i in range(lo, hi):
            v = y[order[i]]
            s1 += v
            s2 += v * v
        mean = s1 / m
        sse = s2 - s1 * s1 / m
        value[node] = mean
        if m < MIN_SAMPLES_SPLIT or sse <= 0.0:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # Draw mtry distinct features, then visit them in ascending index
        # order so exact gain ties resolve to the lowest feature.
        for j in range(k):
            featbuf[j] = j
        for j in range(mtry):
            pick = j + np.random.randint(0, k - j)
            tmp = featbuf[j]
            featbuf[j] = featbuf[pick]
            featbuf[pick] = tmp
        for a in range(1, mtry):
            key = featbuf[a]
            b = a - 1
            while b >= 0 and featbuf[b] > key:
                featbuf[b + 1] = featbuf[b]
                b -= 1
            featbuf[b + 1] = key

        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        xs = np.empty(m, np.float64)
        for fj in range(mtry):
            f = featbuf[fj]
            for i in range(m):
                xs[i] = X[order[lo + i], f]
            srt = np.argsort(xs)
            run1 = 0.0
            run2 = 0.0
            for i in range(m - 1):
                v = y[order[lo + srt[i]]]
                run1 += v
                run2 += v * v
                x_i = xs[srt[i]]
                x_next = xs[srt[i + 1]]
                if x_next > x_i:
                    nl = i + 1
                    nr = m - nl
                    sse_l = run2 - run1 * run1 / nl
                    rest1 = s1 - run1
                    sse_r = (s2 - run2) - rest1 * rest1 / nr
                    gain = sse - sse_l - sse_r
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = f
                        best_thr = 0.5 * (x_i + x_next)

        if best_feat < 0:
            continue

        i = lo
        j = hi - 1
        while i <= j:
            if X[order[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                j -= 1
        mid = i

        feat[node] = best_feat
        thr[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = mid
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = mid
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _accumulate_tree(feat, thr, left, right, value, X, out):  # pragma: no cover - jit
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


def _as_matrix(X) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def fit(X, y, hp: Hyperparams, seed: int, *, bootstrap: bool = True) -> ForestModel:
    """Fit a forest on (X, y). Equal inputs yield an identical model.

    `bootstrap=False` is a test hook that trains every tree on the full
    sample (still with per-node feature subsampling).
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    n, k = X.shape
    if n == 0:
        raise ValueError("training set is empty")
    if y.shape != (n,):
        raise ValueError(f"target length {y.shape} does not match {n} rows")
    mtry = math.ceil(k / 3)
    depth = _UNBOUNDED if hp.max_depth is None else hp.max_depth
    tree_seeds = np.random.SeedSequence(seed).generate_state(hp.n_estimators)
    trees = []
    for s in tree_seeds:
        arrays = _grow_tree(X, y, depth, mtry, int(s), bootstrap)
        trees.append(FlatTree(*arrays))
    return ForestModel(trees=tuple(trees), hyperparams=hp, seed=seed, n_features=k)


def predict_many(model: ForestModel, X) -> np.ndarray:
    """Mean of per-tree predictions for each row of X."""
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {X.shape[1]}"
        )
    out = np.zeros(X.shape[0])
    for tree in model.trees:
        _accumulate_tree(tree.feature, tree.threshold, tree.left, tree.right,
                         tree.value, X, out)
    return out / len(model.trees)


def predict(model: ForestModel, x) -> float:
    """Prediction for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict expects a single feature vector")
    return float(predict_many(model, x.reshape(1, -1))[0])


def training_rmse(model: ForestModel, X, y) -> float:
    pred = predict_many(model, X)
    return float(np.sqrt(np.mean((pred - np.asarray(y, dtype=float)) ** 2)))


# ---------------------------------------------------------------------------
# Hyperparameter search.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    """Uniform sampling ranges for random search (inclusive bounds)."""

    n_estimators_range: tuple[int, int] = (50, 300)
    max_depth_range: tuple[int, int] = (3, 20)
    include_unbounded_depth: bool = True
    n_iter: int = 10

    def __post_init__(self) -> None:
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        lo, hi = self.n_estimators_range
        if not (1 <= lo <= hi):
            raise ValueError("n_estimators_range must be a non-empty range of >= 1")
        lo, hi = self.max_depth_range
        if not (1 <= lo <= hi):
            raise ValueError("max_depth_range must be a non-empty range of >= 1")


DEFAULT_SEARCH_SPACE = SearchSpace()


class SearchResult(NamedTuple):
    hyperparams: Hyperparams
    cv_score: float


def propose_candidates(space: SearchSpace, seed: int) -> list[Hyperparams]:
    """The deterministic candidate sequence random_search_cv evaluates."""
    rng = np.random.default_rng(seed)
    lo_e, hi_e = space.n_estimators_range
    lo_d, hi_d = space.max_depth_range
    n_depth_options = hi_d - lo_d + 1 + (1 if space.include_unbounded_depth else 0)
    out = []
    for _ in range(space.n_iter):
        n_est = int(rng.integers(lo_e, hi_e + 1))
        d_idx = int(rng.integers(0, n_depth_options))
        if space.include_unbounded_depth and d_idx == n_depth_options - 1:
            depth = None
        else:
            depth = lo_d + d_idx
        out.append(Hyperparams(n_estimators=n_est, max_depth=depth))
    return out


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffled near-equal fold index arrays (sizes differ by at most 1)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least {k} samples for {k} folds, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def _fit_seed(seed: int, hp: Hyperparams, fold: int) -> int:
    depth_tag = "none" if hp.max_depth is None else hp.max_depth
    return derive_seed(seed, "cvfit", hp.n_estimators, depth_tag, fold)


def cv_rmse(X, y, hp: Hyperparams, folds: list[np.ndarray], seed: int) -> float:
    """Mean held-out RMSE of `hp` over the given folds."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    scores = []
    for fi, test_idx in enumerate(folds):
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        model = fit(X[mask], y[mask], hp, _fit_seed(seed, hp, fi))
        pred = predict_many(model, X[test_idx])
        scores.append(float(np.sqrt(np.mean((pred - y[test_idx]) ** 2))))
    return float(np.mean(scores))


def random_search_cv(X, y, space: SearchSpace, k: int = 5,
                     seed: int = 0) -> SearchResult:
    """Sample `space.n_iter` candidates, score by k-fold RMSE, return argmin.

    Ties break toward smaller n_estimators, then smaller max_depth (any
    bounded depth ordering before unbounded).
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < k:
        raise ValueError(f"need at least {k} samples for {k}-fold CV, got {len(y)}")
    candidates = propose_candidates(space, derive_seed(seed, "candidates"))
    folds = kfold_indices(len(y), k, derive_seed(seed, "folds"))
    best: tuple[float, float, float] | None = None
    best_hp: Hyperparams | None = None
    best_score = math.inf
    for hp in candidates:
        score = cv_rmse(X, y, hp, folds, seed)
        key = (score, float(hp.n_estimators), hp.depth_sort_key)
        if best is None or key < best:
            best = key
            best_hp = hp
            best_score = score
    assert best_hp is not None
    return SearchResult(hyperparams=best_hp, cv_score=best_score)


def nested_cv_evaluate(X, y, space: SearchSpace, k_outer: int = 5,
                       k_inner: int = 5, seed: int = 0) -> float:
    """Unbiased generalization RMSE: inner search per outer fold, outer score."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < k_outer * k_inner:
        raise ValueError(
            f"need at least {k_outer * k_inner} samples for "
            f"{k_outer}x{k_inner} nested CV, got {n}"
        )
    outer = kfold_indices(n, k_outer, derive_seed(seed, "outer"))
    scores = []
    for fi, test_idx in enumerate(outer):
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        result = random_search_cv(X[mask], y[mask], space, k_inner,
                                  derive_seed(seed, "inner", fi))
        model = fit(X[mask], y[mask], result.hyperparams,
                    derive_seed(seed, "outer_fit", fi))
        pred = predict_many(model, X[test_idx])
        scores.append(float(np.sqrt(np.mean((pred - y[test_idx]) ** 2))))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# JSON serialization (nested node objects).
# ---------------------------------------------------------------------------

def _node_to_dict(tree: FlatTree, i: int) -> dict:
    if tree.feature[i] < 0:
        return {"value": float(tree.value[i])}
    return {
        "feature": int(tree.feature[i]),
        "threshold": float(tree.threshold[i]),
        "left": _node_to_dict(tree, int(tree.left[i])),
        "right": _node_to_dict(tree, int(tree.right[i])),
    }


def model_to_dict(model: ForestModel) -> dict:
    """JSON-ready document with nested `feature/threshold/left/right/value` nodes."""
    return {
        "n_features": model.n_features,
        "seed": model.seed,
        "hyperparams": model.hyperparams.to_dict(),
        "trees": [_node_to_dict(t, 0) for t in model.trees],
    }


def _dict_to_flat(node: dict) -> FlatTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def add(nd: dict) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if "value" in nd:
            value[i] = float(nd["value"])
        else:
            feature[i] = int(nd["feature"])
            threshold[i] = float(nd["threshold"])
            left[i] = add(nd["left"])
            right[i] = add(nd["right"])
        return i

    add(node)
    return FlatTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


def model_from_dict(doc: dict) -> ForestModel:
    """Inverse of :func:`model_to_dict`."""
    return ForestModel(
        trees=tuple(_dict_to_flat(t) for t in doc["trees"]),
        hyperparams=Hyperparams.from_dict(doc["hyperparams"]),
        seed=doc["seed"],
        n_features=doc["n_features"],
    )
