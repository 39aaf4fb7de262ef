"""Regression trees and a bootstrap random forest with impurity importances.

Splits are exhaustive: for every allowed feature, every midpoint between two
consecutive distinct sorted values is tried and the partition with the lowest
size-weighted child variance wins.  Exact ties go to the lower feature index,
then the lower threshold.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

# relative slack under which two split impurities count as tied
TIE_TOL = 1e-12


def impurity(targets) -> float:
    """Mean squared deviation from the mean."""
    # sorting first makes the float result independent of input order
    y = np.sort(np.asarray(targets, dtype=float))
    if y.size == 0:
        raise ValueError("impurity of an empty set is undefined")
    return float(np.mean((y - y.mean()) ** 2))


def split_impurity(left, right) -> float:
    """Size-weighted impurity of a two-way partition."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.size == 0 or right.size == 0:
        raise ValueError("degenerate split: both sides must be non-empty")
    n_l, n_r = left.size, right.size
    return (n_l * impurity(left) + n_r * impurity(right)) / (n_l + n_r)


@dataclass(frozen=True)
class SplitCandidate:
    dim: int
    threshold: float


@dataclass
class Leaf:
    value: float
    n_samples: int
    impurity: float


@dataclass
class Internal:
    split: SplitCandidate
    left: "Node"
    right: "Node"
    n_samples: int
    impurity: float
    value: float


Node = Union[Leaf, Internal]


def _candidates(X: np.ndarray, y: np.ndarray, dims: Sequence[int], min_leaf: int):
    n = y.size
    yc = y - np.sort(y).mean()
    ys_sorted = np.sort(yc)
    total, total2 = ys_sorted.sum(), np.dot(ys_sorted, ys_sorted)
    out = []
    for d in dims:
        order = np.lexsort((yc, X[:, d]))
        xs, ys = X[order, d], yc[order]
        cut = np.flatnonzero(xs[1:] != xs[:-1])  # left block is [0..i]
        if cut.size == 0:
            continue
        n_left = cut + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        cut, n_left = cut[ok], n_left[ok]
        if cut.size == 0:
            continue
        cs, cs2 = np.cumsum(ys)[cut], np.cumsum(ys * ys)[cut]
        sse_l = np.maximum(cs2 - cs * cs / n_left, 0.0)
        rs = total - cs
        sse_r = np.maximum((total2 - cs2) - rs * rs / (n - n_left), 0.0)
        g = (sse_l + sse_r) / n
        thr = (xs[cut] + xs[cut + 1]) / 2.0
        out.extend(zip(g.tolist(), [d] * len(cut), thr.tolist()))
    return out


def best_split(X, y, allowed_dims: Sequence[int] | None = None, min_leaf: int = 1) -> SplitCandidate | None:
    """Exhaustive minimum-impurity split, or ``None`` when nothing can split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) with one target per row")
    dims = range(X.shape[1]) if allowed_dims is None else sorted(allowed_dims)
    cands = _candidates(X, y, dims, min_leaf)
    if not cands:
        return None
    g_min = min(c[0] for c in cands)
    tol = TIE_TOL * max(1.0, abs(g_min))
    _, d, t = min((c for c in cands if c[0] <= g_min + tol), key=lambda c: (c[1], c[2]))
    return SplitCandidate(int(d), float(t))


def node_importance(node: Internal) -> float:
    """Sample-weighted impurity decrease of an internal node."""
    if not isinstance(node, Internal):
        raise TypeError("node importance is only defined for internal nodes")
    dec = (
        node.n_samples * node.impurity
        - node.left.n_samples * node.left.impurity
        - node.right.n_samples * node.right.impurity
    )
    # variance decomposition makes this >= 0; clip rounding noise
    return max(dec, 0.0)


def iter_nodes(node: Node):
    stack = [node]
    while stack:
        cur = stack.pop()
        yield cur
        if isinstance(cur, Internal):
            stack.append(cur.right)
            stack.append(cur.left)


def tree_predict(node: Node, x: np.ndarray) -> float:
    while isinstance(node, Internal):
        node = node.left if x[node.split.dim] <= node.split.threshold else node.right
    return node.value


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    min_leaf: int = 2
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    mtry: bool = False  # per-split random subset of ceil(sqrt(d)) features
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")


def _build(X, y, depth, params: ForestParams, rng) -> Node:
    n = y.size
    mean = float(np.sort(y).mean())
    imp = impurity(y)
    if (
        np.ptp(y) == 0
        or n < 2 * params.min_leaf
        or (params.max_depth is not None and depth >= params.max_depth)
    ):
        return Leaf(mean, n, imp)
    split = None
    if params.mtry:
        d = X.shape[1]
        m = math.ceil(math.sqrt(d))
        split = best_split(X, y, rng.choice(d, size=m, replace=False), params.min_leaf)
    if split is None:
        split = best_split(X, y, None, params.min_leaf)
    if split is None:
        return Leaf(mean, n, imp)
    mask = X[:, split.dim] <= split.threshold
    left = _build(X[mask], y[mask], depth + 1, params, rng)
    right = _build(X[~mask], y[~mask], depth + 1, params, rng)
    return Internal(split, left, right, n, imp, mean)


def fit_tree(X, y, params: ForestParams, rng: np.random.Generator | None = None) -> Node:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return _build(X, y, 0, params, rng if rng is not None else np.random.default_rng(params.seed))


class RandomForest:
    def __init__(self, trees: list[Node], n_features: int, params: ForestParams):
        self.trees = trees
        self.n_features = n_features
        self.params = params

    @classmethod
    def fit(cls, X, y, params: ForestParams = ForestParams()) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError("X must be (n, d) with one target per row")
        if y.size < 2:
            raise ValueError("a forest needs at least 2 examples")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        n = y.size
        seqs = np.random.SeedSequence(params.seed).spawn(params.n_trees)

        def grow(seq):
            rng = np.random.default_rng(seq)
            if params.bootstrap:
                idx = rng.integers(0, n, size=n)
                return fit_tree(X[idx], y[idx], params, rng)
            return fit_tree(X, y, params, rng)

        if params.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
                trees = list(pool.map(grow, seqs))
        else:
            trees = [grow(s) for s in seqs]
        return cls(trees, X.shape[1], params)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected a feature vector of length {self.n_features}, got shape {x.shape}")
        return x

    def predict_trees(self, x) -> np.ndarray:
        x = self._check(x)
        return np.array([tree_predict(t, x) for t in self.trees])

    def predict(self, x) -> float:
        return float(self.predict_trees(x).mean())

    def feature_importances(self) -> np.ndarray:
        """Share of the total impurity decrease attributed to each feature."""
        acc = np.zeros(self.n_features)
        for tree in self.trees:
            for node in iter_nodes(tree):
                if isinstance(node, Internal):
                    acc[node.split.dim] += node_importance(node)
        total = acc.sum()
        return acc / total if total > 0 else acc

    def n_internal(self) -> int:
        return sum(isinstance(nd, Internal) for t in self.trees for nd in iter_nodes(t))

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "params": asdict(self.params),
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RandomForest":
        return cls(
            [_node_from_dict(t) for t in data["trees"]],
            int(data["n_features"]),
            ForestParams(**data["params"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RandomForest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"value": node.value, "n": node.n_samples, "impurity": node.impurity}
    return {
        "dim": node.split.dim,
        "threshold": node.split.threshold,
        "n": node.n_samples,
        "impurity": node.impurity,
        "value": node.value,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> Node:
    if "dim" not in d:
        return Leaf(float(d["value"]), int(d["n"]), float(d["impurity"]))
    return Internal(
        SplitCandidate(int(d["dim"]), float(d["threshold"])),
        _node_from_dict(d["left"]),
        _node_from_dict(d["right"]),
        int(d["n"]),
        float(d["impurity"]),
        float(d["value"]),
    )
