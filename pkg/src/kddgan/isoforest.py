"""Isolation Forest anomaly scores.

Anomalies are isolated by fewer random axis-aligned cuts than ordinary
points. A record's score is ``2 ** (-E[h(x)] / c(psi))`` where ``h`` is its
path length in a tree grown on ``psi`` subsampled rows and ``c`` the average
unsuccessful-search length of a binary search tree.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

FOREST_FORMAT = "kddgan.isoforest/1"
EULER_GAMMA = 0.5772156649015329


def harmonic(n: int) -> float:
    if n <= 1000:
        return math.fsum(1.0 / i for i in range(1, n + 1))
    return math.log(n) + EULER_GAMMA


def average_path_length(n: int) -> float:
    """c(n): mean path length of an unsuccessful search among ``n`` keys."""
    if n < 1:
        raise ValueError(f"c(n) needs n >= 1, got {n}")
    if n == 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


c = average_path_length


@dataclass
class IsoTree:
    """Flat isolation tree: ``left < 0`` marks an external node."""

    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    height_limit: int

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        """Edges to the external node plus ``c(size)`` for every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        depth = np.zeros(len(X))
        active = self.left[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            k = node[idx]
            go_left = X[idx, self.feature[k]] < self.split[k]
            node[idx] = np.where(go_left, self.left[k], self.right[k])
            depth[idx] += 1
            active = self.left[node] >= 0
        adjust = np.array([average_path_length(int(s)) if s > 1 else 0.0 for s in self.size])
        return depth + adjust[node]

    def path_length(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.path_lengths(x.reshape(1, -1))[0])

    def to_dict(self) -> dict:
        return {
            "height_limit": self.height_limit,
            "feature": self.feature.tolist(),
            "split": self.split.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "size": self.size.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IsoTree":
        return cls(
            np.asarray(doc["feature"], np.int64), np.asarray(doc["split"], np.float64),
            np.asarray(doc["left"], np.int64), np.asarray(doc["right"], np.int64),
            np.asarray(doc["size"], np.int64), int(doc["height_limit"]),
        )


def grow_isolation_tree(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> IsoTree:
    feature, split, left, right, size = [], [], [], [], []

    def new_node():
        feature.append(-1)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        k, idx, depth = stack.pop()
        size[k] = len(idx)
        if depth >= height_limit or len(idx) <= 1:
            continue
        rows = X[idx]
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        spread = np.flatnonzero(hi > lo)
        if spread.size == 0:
            continue
        f = int(spread[rng.integers(spread.size)])
        value = rng.uniform(lo[f], hi[f])
        while not lo[f] < value < hi[f]:
            value = rng.uniform(lo[f], hi[f])
        mask = rows[:, f] < value
        feature[k], split[k] = f, float(value)
        left[k], right[k] = new_node(), new_node()
        stack.append((right[k], idx[~mask], depth + 1))
        stack.append((left[k], idx[mask], depth + 1))
    return IsoTree(
        np.asarray(feature, np.int64), np.asarray(split, np.float64),
        np.asarray(left, np.int64), np.asarray(right, np.int64),
        np.asarray(size, np.int64), height_limit,
    )


class IsoForest(OutlierMixin, BaseEstimator):
    """Isolation Forest with per-tree seeds spawned from ``random_state``.

    ``max_samples=None`` means ``min(256, n_rows)``. ``decision_function``
    returns ``0.5 - score`` so negative values flag anomalies.
    """

    def __init__(self, n_trees: int = 100, max_samples: int | None = None, random_state: int = 0):
        self.n_trees = n_trees
        self.max_samples = max_samples
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = len(X)
        psi = min(256, n) if self.max_samples is None else int(self.max_samples)
        if psi > n:
            raise ValueError(f"subsample size {psi} exceeds the {n} available rows")
        if psi < 2:
            raise ValueError("subsample size must be >= 2")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        self.psi_ = psi
        self.height_limit_ = int(math.ceil(math.log2(psi)))
        self.n_features_in_ = X.shape[1]
        self.trees_ = []
        for child in np.random.SeedSequence(self.random_state).spawn(self.n_trees):
            rng = np.random.default_rng(child)
            sample = X[rng.choice(n, psi, replace=False)]
            self.trees_.append(grow_isolation_tree(sample, rng, self.height_limit_))
        return self

    def _check(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, forest expects {self.n_features_in_}")
        return X

    def mean_path_length(self, X) -> np.ndarray:
        X = self._check(X)
        total = np.zeros(len(X))
        for tree in self.trees_:
            total += tree.path_lengths(X)
        return total / len(self.trees_)

    def score_samples(self, X) -> np.ndarray:
        """Anomaly score in (0, 1); higher is more anomalous."""
        return anomaly_score(self.mean_path_length(X), self.psi_)

    def decision_function(self, X) -> np.ndarray:
        return 0.5 - self.score_samples(X)

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) < 0, -1, 1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "format": FOREST_FORMAT,
            "params": self.get_params(),
            "psi": self.psi_,
            "n_features": self.n_features_in_,
            "trees": [t.to_dict() for t in self.trees_],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "IsoForest":
        if doc.get("format") != FOREST_FORMAT:
            raise ValueError(f"unsupported forest document format {doc.get('format')!r}")
        forest = cls(**doc["params"])
        forest.psi_ = doc["psi"]
        forest.n_features_in_ = doc["n_features"]
        forest.trees_ = [IsoTree.from_dict(t) for t in doc["trees"]]
        forest.height_limit_ = forest.trees_[0].height_limit
        return forest


def anomaly_score(mean_path, psi: int) -> np.ndarray:
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / average_path_length(psi))


@dataclass(frozen=True)
class ClassAnomaly:
    class_name: str
    mean_score: float
    mean_decision: float
    count: int


def class_anomaly_ranking(forest: IsoForest, fm) -> list[ClassAnomaly]:
    """Per-class mean anomaly score, most anomalous class first."""
    scores = forest.score_samples(fm.values)
    out = []
    for cid, name in enumerate(fm.class_names):
        mask = fm.class_ids == cid
        if not mask.any():
            continue
        s = scores[mask]
        out.append(ClassAnomaly(name, float(s.mean()), float((0.5 - s).mean()), int(mask.sum())))
    out.sort(key=lambda r: (-r.mean_score, r.class_name))
    return out


def ranking_csv(ranking: list[ClassAnomaly]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "mean_score", "mean_decision", "count"])
    for r in ranking:
        w.writerow([r.class_name, repr(r.mean_score), repr(r.mean_decision), r.count])
    return buf.getvalue()
