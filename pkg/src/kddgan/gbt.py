"""Multiclass gradient-boosted regression trees (second-order, exact greedy).

Each boosting round computes softmax probabilities from the current margins,
derives per-class gradients ``p - 1{y=c}`` and hessians ``p (1 - p)`` and
grows one regression tree per class. A split is scored with

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

and leaves get the Newton weight ``-eta * G / (H + lambda)``.

Split finding enumerates every boundary between consecutive distinct feature
values present in a node. Values are pre-binned per feature on their sorted
uniques. Large nodes scan a per-bin gradient histogram, small nodes sort their
rows per feature; both visit the same candidates, so the result is the exact
greedy split either way.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import ParameterSampler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

MODEL_FORMAT = "kddgan.gbt/1"

# node table columns
_FEATURE, _LO, _HI, _LEFT, _RIGHT = range(5)
_GAIN, _SUM_G, _SUM_H, _WEIGHT = range(4)


@njit(cache=True)
def _node_histogram(codes, offsets, n_bins, g, h, buf, start, end):
    hist = np.zeros((n_bins, 3))
    n_feat = codes.shape[1]
    for i in range(start, end):
        r = buf[i]
        gr = g[r]
        hr = h[r]
        for j in range(n_feat):
            b = offsets[j] + codes[r, j]
            hist[b, 0] += gr
            hist[b, 1] += hr
            hist[b, 2] += 1.0
    return hist


@njit(cache=True)
def _best_split(hist, offsets, sum_g, sum_h, lam, gamma, min_child_weight):
    best_gain = 0.0
    best_feat = -1
    best_lo = -1
    best_hi = -1
    parent = sum_g * sum_g / (sum_h + lam)
    n_feat = offsets.shape[0] - 1
    for j in range(n_feat):
        gl = 0.0
        hl = 0.0
        prev = -1
        for b in range(offsets[j], offsets[j + 1]):
            if hist[b, 2] == 0.0:
                continue
            if prev >= 0:
                gr = sum_g - gl
                hr = sum_h - hl
                if hl >= min_child_weight and hr >= min_child_weight:
                    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = j
                        best_lo = prev - offsets[j]
                        best_hi = b - offsets[j]
            gl += hist[b, 0]
            hl += hist[b, 1]
            prev = b
    return best_feat, best_lo, best_hi, best_gain


@njit(cache=True)
def _best_split_sorted(codes, g, h, buf, start, end, sum_g, sum_h, lam, gamma, min_child_weight):
    """Same search as ``_best_split`` but by sorting the node's rows per feature;
    cheaper than a histogram when the node is small relative to the bin count."""
    best_gain = 0.0
    best_feat = -1
    best_lo = -1
    best_hi = -1
    parent = sum_g * sum_g / (sum_h + lam)
    m = end - start
    vals = np.empty(m, dtype=codes.dtype)
    for j in range(codes.shape[1]):
        for i in range(m):
            vals[i] = codes[buf[start + i], j]
        order = np.argsort(vals, kind="mergesort")
        gl = 0.0
        hl = 0.0
        for p in range(m):
            i = order[p]
            if p > 0:
                prev = vals[order[p - 1]]
                cur = vals[i]
                if cur != prev:
                    gr = sum_g - gl
                    hr = sum_h - hl
                    if hl >= min_child_weight and hr >= min_child_weight:
                        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
                        if gain > best_gain:
                            best_gain = gain
                            best_feat = j
                            best_lo = prev
                            best_hi = cur
            r = buf[start + i]
            gl += g[r]
            hl += h[r]
    return best_feat, best_lo, best_hi, best_gain


@njit(cache=True)
def _prefer_histogram(m, n_feat, n_bins):
    return 3.0 * m * n_feat + 4.0 * n_bins < n_feat * m * (np.log2(m + 1.0) + 4.0)


@njit(cache=True)
def _grow_tree(codes, offsets, g, h, rows, max_depth, lam, gamma, min_child_weight, eta):
    """Grow one tree depth-first; returns integer and float node tables."""
    n_bins = offsets[-1]
    n_feat = codes.shape[1]
    n_rows = rows.shape[0]
    cap = 2 * n_rows + 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1))
    itab = np.full((cap, 5), -1, dtype=np.int64)
    ftab = np.zeros((cap, 4))
    counts = np.zeros(cap, dtype=np.int64)
    buf = rows.copy()
    tmp = np.empty_like(buf)
    no_hist = np.zeros((0, 3))

    st_node = [0]
    st_start = [0]
    st_end = [n_rows]
    st_depth = [0]
    st_hist = [no_hist]
    n_nodes = 1
    while len(st_node) > 0:
        node = st_node.pop()
        start = st_start.pop()
        end = st_end.pop()
        depth = st_depth.pop()
        hist = st_hist.pop()

        sg = 0.0
        sh = 0.0
        for i in range(start, end):
            sg += g[buf[i]]
            sh += h[buf[i]]
        ftab[node, _SUM_G] = sg
        ftab[node, _SUM_H] = sh
        ftab[node, _WEIGHT] = -eta * sg / (sh + lam)
        counts[node] = end - start
        if depth >= max_depth or end - start < 2:
            continue
        use_hist = _prefer_histogram(end - start, n_feat, n_bins)
        if use_hist:
            if hist.shape[0] == 0:
                hist = _node_histogram(codes, offsets, n_bins, g, h, buf, start, end)
            feat, lo, hi, gain = _best_split(hist, offsets, sg, sh, lam, gamma, min_child_weight)
        else:
            feat, lo, hi, gain = _best_split_sorted(
                codes, g, h, buf, start, end, sg, sh, lam, gamma, min_child_weight
            )
        if feat < 0:
            continue

        # stable partition of buf[start:end] on code <= lo
        nl = 0
        nr = 0
        for i in range(start, end):
            r = buf[i]
            if codes[r, feat] <= lo:
                buf[start + nl] = r
                nl += 1
            else:
                tmp[nr] = r
                nr += 1
        for i in range(nr):
            buf[start + nl + i] = tmp[i]
        mid = start + nl

        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        itab[node, _FEATURE] = feat
        itab[node, _LO] = lo
        itab[node, _HI] = hi
        itab[node, _LEFT] = left
        itab[node, _RIGHT] = right
        ftab[node, _GAIN] = gain

        hl_ = no_hist
        hr_ = no_hist
        child_hist = depth + 1 < max_depth and (
            _prefer_histogram(nl, n_feat, n_bins) or _prefer_histogram(nr, n_feat, n_bins)
        )
        if use_hist and child_hist:
            if nl <= nr:
                hl_ = _node_histogram(codes, offsets, n_bins, g, h, buf, start, mid)
                hr_ = hist - hl_
            else:
                hr_ = _node_histogram(codes, offsets, n_bins, g, h, buf, mid, end)
                hl_ = hist - hr_
        st_node.append(right)
        st_start.append(mid)
        st_end.append(end)
        st_depth.append(depth + 1)
        st_hist.append(hr_)
        st_node.append(left)
        st_start.append(start)
        st_end.append(mid)
        st_depth.append(depth + 1)
        st_hist.append(hl_)
    return itab[:n_nodes], ftab[:n_nodes], counts[:n_nodes]


@njit(cache=True)
def _apply_codes(itab, ftab, codes):
    """Leaf weights of one tree for pre-binned rows."""
    n = codes.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while itab[k, _LEFT] >= 0:
            if codes[i, itab[k, _FEATURE]] <= itab[k, _LO]:
                k = itab[k, _LEFT]
            else:
                k = itab[k, _RIGHT]
        out[i] = ftab[k, _WEIGHT]
    return out


@njit(cache=True)
def _predict_margins(X, feature, threshold, left, right, value, roots, tree_class, n_classes, base):
    n = X.shape[0]
    out = np.full((n, n_classes), base)
    for t in range(roots.shape[0]):
        c = tree_class[t]
        root = roots[t]
        for i in range(n):
            k = root
            while left[k] >= 0:
                if X[i, feature[k]] < threshold[k]:
                    k = left[k]
                else:
                    k = right[k]
            out[i, c] += value[k]
    return out


def softmax(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss(margins: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of softmax(margins) against integer labels."""
    z = margins - margins.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return logsum - z[np.arange(len(y)), y]


def softmax_grad_hess(margins: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = softmax(margins)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return p - onehot, p * (1.0 - p)


def split_gain(gl, hl, gr, hr, reg_lambda=1.0, gamma=0.0):
    """Closed-form second-order gain of splitting a node into (L, R)."""
    g, h = gl + gr, hl + hr
    return 0.5 * (gl**2 / (hl + reg_lambda) + gr**2 / (hr + reg_lambda) - g**2 / (h + reg_lambda)) - gamma


@dataclass
class Tree:
    """Flat node table of one regression tree; node 0 is the root."""

    class_id: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    sum_grad: np.ndarray
    sum_hess: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, k: int) -> bool:
        return self.left[k] < 0

    def to_dict(self, k: int = 0) -> dict:
        node = {
            "count": int(self.count[k]),
            "sum_grad": float(self.sum_grad[k]),
            "sum_hess": float(self.sum_hess[k]),
        }
        if self.is_leaf(k):
            node["leaf"] = float(self.value[k])
            return node
        node.update(
            feature=int(self.feature[k]),
            threshold=float(self.threshold[k]),
            gain=float(self.gain[k]),
            left=self.to_dict(int(self.left[k])),
            right=self.to_dict(int(self.right[k])),
        )
        return node

    @classmethod
    def from_dict(cls, class_id: int, root: dict) -> "Tree":
        rows: list[dict] = []

        def visit(node):
            k = len(rows)
            rows.append(node)
            if "leaf" not in node:
                node["_l"] = visit(node["left"])
                node["_r"] = visit(node["right"])
            return k

        visit(dict(root))
        n = len(rows)
        t = cls(
            class_id,
            feature=np.full(n, -1, np.int64), threshold=np.zeros(n), left=np.full(n, -1, np.int64),
            right=np.full(n, -1, np.int64), value=np.zeros(n), gain=np.zeros(n),
            sum_grad=np.zeros(n), sum_hess=np.zeros(n), count=np.zeros(n, np.int64),
        )
        for k, node in enumerate(rows):
            t.count[k] = node["count"]
            t.sum_grad[k] = node["sum_grad"]
            t.sum_hess[k] = node["sum_hess"]
            if "leaf" in node:
                t.value[k] = node["leaf"]
            else:
                t.feature[k] = node["feature"]
                t.threshold[k] = node["threshold"]
                t.gain[k] = node["gain"]
                t.left[k] = node["_l"]
                t.right[k] = node["_r"]
        return t


def _bin_features(X: np.ndarray):
    uniques = [np.unique(X[:, j]) for j in range(X.shape[1])]
    codes = np.empty(X.shape, dtype=np.int32)
    for j, u in enumerate(uniques):
        codes[:, j] = np.searchsorted(u, X[:, j])
    offsets = np.zeros(X.shape[1] + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(u) for u in uniques])
    return np.ascontiguousarray(codes), offsets, uniques


class BoostedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Softmax gradient boosting with second-order exact greedy trees.

    Parameters
    ----------
    n_rounds : int
        Boosting rounds; one tree per class is added each round.
    learning_rate : float
        Shrinkage applied to every leaf weight, in (0, 1].
    max_depth : int
        Maximum tree depth (root has depth 0).
    min_child_weight : float
        Minimum hessian sum allowed in each child of a split.
    reg_lambda : float
        L2 penalty on leaf weights.
    gamma : float
        Penalty per additional leaf; subtracted from every split gain.
    subsample : float
        Fraction of rows drawn (without replacement) for each tree.
    base_score : float
        Initial margin for every class.
    random_state : int
        Seed for row subsampling.
    """

    def __init__(
        self,
        n_rounds: int = 160,
        learning_rate: float = 0.3,
        max_depth: int = 6,
        min_child_weight: float = 1.0,
        reg_lambda: float = 1.0,
        gamma: float = 0.0,
        subsample: float = 1.0,
        base_score: float = 0.0,
        random_state: int = 0,
    ):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_child_weight = min_child_weight
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.subsample = subsample
        self.base_score = base_score
        self.random_state = random_state

    def _validate_params(self):
        if int(self.n_rounds) < 0:
            raise ValueError("n_rounds must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if int(self.max_depth) < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("min_child_weight, reg_lambda and gamma must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")

    def fit(self, X, y, feature_names=None):
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data must contain at least two classes")
        n, d = X.shape
        k = len(self.classes_)
        self.n_features_in_ = d
        self.feature_names_ = tuple(feature_names) if feature_names is not None else tuple(
            f"f{j}" for j in range(d)
        )
        codes, offsets, uniques = _bin_features(X)
        rng = np.random.default_rng(self.random_state)
        all_rows = np.arange(n, dtype=np.int64)
        n_sub = max(1, int(np.floor(self.subsample * n)))

        margins = np.full((n, k), float(self.base_score))
        self.trees_: list[Tree] = []
        self.loss_trace_: list[float] = []
        for _ in range(int(self.n_rounds)):
            grad, hess = softmax_grad_hess(margins, y_idx)
            for c in range(k):
                rows = all_rows if self.subsample >= 1 else np.sort(rng.choice(n, n_sub, replace=False))
                itab, ftab, counts = _grow_tree(
                    codes, offsets, np.ascontiguousarray(grad[:, c]), np.ascontiguousarray(hess[:, c]),
                    rows, int(self.max_depth), float(self.reg_lambda), float(self.gamma),
                    float(self.min_child_weight), float(self.learning_rate),
                )
                margins[:, c] += _apply_codes(itab, ftab, codes)
                self.trees_.append(self._to_tree(c, itab, ftab, counts, uniques))
            self.loss_trace_.append(float(softmax_loss(margins, y_idx).mean()))
        self._pack()
        return self

    @staticmethod
    def _to_tree(c, itab, ftab, counts, uniques) -> Tree:
        feature = itab[:, _FEATURE].copy()
        threshold = np.zeros(len(feature))
        for node in np.flatnonzero(feature >= 0):
            u = uniques[feature[node]]
            lo, hi = u[itab[node, _LO]], u[itab[node, _HI]]
            mid = (lo + hi) / 2.0
            threshold[node] = mid if lo < mid <= hi else hi
        value = ftab[:, _WEIGHT].copy()
        return Tree(
            c, feature, threshold, itab[:, _LEFT].copy(), itab[:, _RIGHT].copy(), value,
            ftab[:, _GAIN].copy(), ftab[:, _SUM_G].copy(), ftab[:, _SUM_H].copy(), counts.copy(),
        )

    def _pack(self):
        """Concatenate node tables for vectorised prediction."""
        offs, feats, thr, lefts, rights, vals, cls = [], [], [], [], [], [], []
        base = 0
        for t in self.trees_:
            offs.append(base)
            feats.append(np.where(t.feature >= 0, t.feature, 0))
            thr.append(t.threshold)
            lefts.append(np.where(t.left >= 0, t.left + base, -1))
            rights.append(np.where(t.right >= 0, t.right + base, -1))
            vals.append(t.value)
            cls.append(t.class_id)
            base += t.n_nodes
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        self._packed = (
            cat(feats, np.int64), cat(thr, np.float64), cat(lefts, np.int64), cat(rights, np.int64),
            cat(vals, np.float64), np.asarray(offs, np.int64), np.asarray(cls, np.int64),
        )

    @property
    def n_classes_(self) -> int:
        return len(self.classes_)

    def decision_function(self, X) -> np.ndarray:
        """Raw per-class margins ``base_score + sum of tree outputs``."""
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        f, t, l, r, v, roots, cls = self._packed
        return _predict_margins(
            np.ascontiguousarray(X), f, t, l, r, v, roots, cls, self.n_classes_, float(self.base_score)
        )

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class id on ties
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    # -- importance ------------------------------------------------------

    @property
    def gain_by_feature_(self) -> dict[int, tuple[float, int]]:
        check_is_fitted(self, "trees_")
        table: dict[int, list] = {}
        for t in self.trees_:
            for k in np.flatnonzero(t.left >= 0):
                table.setdefault(int(t.feature[k]), []).append(float(t.gain[k]))
        # fsum is exact, so the total does not depend on node order
        return {j: (math.fsum(g), len(g)) for j, g in sorted(table.items())}

    def feature_importance(self, top_k: int | None = None) -> list[tuple[str, float]]:
        """Features ranked by mean split gain; never-split features are omitted."""
        ranked = [
            (self.feature_names_[j], total / count)
            for j, (total, count) in self.gain_by_feature_.items()
        ]
        ranked.sort(key=lambda kv: (-kv[1], kv[0]))
        return ranked[:top_k] if top_k is not None else ranked

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "format": MODEL_FORMAT,
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "feature_names": list(self.feature_names_),
            "loss_trace": self.loss_trace_,
            "gain_by_feature": {
                self.feature_names_[j]: {"total_gain": g, "splits": c}
                for j, (g, c) in self.gain_by_feature_.items()
            },
            "trees": [{"class": t.class_id, "root": t.to_dict()} for t in self.trees_],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedTreesClassifier":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model document format {doc.get('format')!r}")
        model = cls(**doc["params"])
        model.classes_ = np.asarray(doc["classes"])
        model.n_features_in_ = doc["n_features"]
        model.feature_names_ = tuple(doc["feature_names"])
        model.loss_trace_ = list(doc["loss_trace"])
        model.trees_ = [Tree.from_dict(t["class"], t["root"]) for t in doc["trees"]]
        model._pack()
        return model

    @classmethod
    def from_json(cls, text: str) -> "BoostedTreesClassifier":
        return cls.from_dict(json.loads(text))


def train(fm, **params) -> BoostedTreesClassifier:
    """Fit a classifier on a FeatureMatrix, keeping its feature names."""
    if len(fm) == 0:
        raise ValueError("empty training set")
    model = BoostedTreesClassifier(**params)
    return model.fit(fm.values, fm.class_ids, feature_names=fm.feature_names)


@dataclass
class TuneResult:
    best_params: dict
    best_score: float
    trials: list[dict]

    def trials_csv(self) -> str:
        keys = sorted({k for t in self.trials for k in t["params"]})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", *keys, "val_accuracy"])
        for t in self.trials:
            w.writerow([t["trial"], *(t["params"].get(k, "") for k in keys), repr(t["val_accuracy"])])
        return buf.getvalue()


def tune(train_fm, val_fm, budget: int, space: dict, seed: int = 0, base_params: dict | None = None) -> TuneResult:
    """Seeded random search; the best trial has the highest validation accuracy
    (earliest trial wins ties)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space:
        raise ValueError("empty search space")
    base_params = dict(base_params or {})
    sampler = ParameterSampler(
        {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in space.items()},
        n_iter=budget, random_state=seed,
    )
    trials = []
    best = None
    for i, sampled in enumerate(sampler):
        params = {**base_params, **{k: _plain(v) for k, v in sampled.items()}}
        model = train(train_fm, **params)
        acc = float(np.mean(model.predict(val_fm.values) == val_fm.class_ids))
        logger.info("tune trial %d: %s -> val accuracy %.6f", i, sampled, acc)
        trials.append({"trial": i, "params": {k: _plain(v) for k, v in sampled.items()}, "val_accuracy": acc})
        if best is None or acc > best[1]:
            best = (params, acc)
    return TuneResult(best_params=best[0], best_score=best[1], trials=trials)


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v
