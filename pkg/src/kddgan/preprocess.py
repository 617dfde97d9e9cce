"""Reversible column encoders and stratified partitioning."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import ColumnSpec, TabularDataset

logger = logging.getLogger(__name__)

DIRECTIVES = ("onehot", "ordinal", "minmax", "passthrough")
ENCODER_FORMAT = "kddgan.encoder/1"


@dataclass(frozen=True)
class Block:
    """Position of one source column inside the encoded matrix."""

    source: str
    directive: str
    start: int
    width: int
    vocabulary: tuple[str, ...] = ()

    @property
    def stop(self) -> int:
        return self.start + self.width


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray
    feature_names: tuple[str, ...]
    class_ids: np.ndarray
    class_names: tuple[str, ...]
    blocks: tuple[Block, ...] = field(default=())

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.feature_names):
            raise ValueError("values must be 2-D with one column per feature name")
        if len(self.class_ids) != self.values.shape[0]:
            raise ValueError("class_ids length must equal the row count")
        if len(self.class_ids) and (
            self.class_ids.min() < 0 or self.class_ids.max() >= len(self.class_names)
        ):
            raise ValueError("class id out of range")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def take(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.intp)
        return FeatureMatrix(
            self.values[indices], self.feature_names, self.class_ids[indices],
            self.class_names, self.blocks,
        )

    def of_class(self, class_id: int) -> "FeatureMatrix":
        return self.take(np.flatnonzero(self.class_ids == class_id))

    def with_rows(self, values: np.ndarray, class_ids: np.ndarray) -> "FeatureMatrix":
        """Append rows; the original rows stay a prefix of the result."""
        return FeatureMatrix(
            np.vstack([self.values, values]),
            self.feature_names,
            np.concatenate([self.class_ids, np.asarray(class_ids, dtype=self.class_ids.dtype)]),
            self.class_names,
            self.blocks,
        )


def default_plan(schema: Sequence[ColumnSpec], onehot: Sequence[str] = ("protocol_type",)) -> dict[str, str]:
    """One-hot for the listed low-cardinality columns, ordinal for other
    categoricals and the label, min-max for everything continuous."""
    plan = {}
    for spec in schema:
        if spec.kind == "continuous":
            plan[spec.name] = "minmax"
        elif spec.kind == "label":
            plan[spec.name] = "ordinal"
        else:
            plan[spec.name] = "onehot" if spec.name in onehot else "ordinal"
    return plan


def validate_plan(plan: Mapping[str, str], schema: Sequence[ColumnSpec]) -> dict[str, str]:
    names = {s.name for s in schema}
    missing = names - set(plan)
    extra = set(plan) - names
    if missing or extra:
        raise ValueError(
            f"encoder plan does not match schema (missing={sorted(missing)}, unknown={sorted(extra)})"
        )
    for spec in schema:
        directive = plan[spec.name]
        if directive not in DIRECTIVES:
            raise ValueError(f"unknown directive {directive!r} for {spec.name!r}")
        if spec.kind == "label" and directive != "ordinal":
            raise ValueError("the label column must be ordinal-encoded")
        if spec.kind == "continuous" and directive in ("onehot", "ordinal"):
            raise ValueError(f"{directive} directive on continuous column {spec.name!r}")
        if spec.kind == "categorical" and directive in ("minmax", "passthrough"):
            raise ValueError(f"{directive} directive on categorical column {spec.name!r}")
    return dict(plan)


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Column-wise one-hot / ordinal / min-max encoding of a TabularDataset.

    Vocabularies are sorted so codes do not depend on row order. Tokens not
    seen during ``fit`` map to the reserved code ``len(vocabulary)`` (ordinal)
    or to an all-zero block (one-hot).

    Parameters
    ----------
    plan : dict or None
        Column name -> directive. ``None`` uses :func:`default_plan`.
    """

    def __init__(self, plan: Mapping[str, str] | None = None):
        self.plan = plan

    def fit(self, ds: TabularDataset, y=None):
        plan = validate_plan(self.plan or default_plan(ds.schema), ds.schema)
        self.schema_ = ds.schema
        self.plan_ = plan
        self.vocabularies_: dict[str, tuple[str, ...]] = {}
        self.ranges_: dict[str, tuple[float, float]] = {}
        blocks = []
        start = 0
        for spec in ds.feature_specs:
            directive = plan[spec.name]
            col = ds.columns[spec.name]
            vocab: tuple[str, ...] = ()
            if directive in ("onehot", "ordinal"):
                vocab = tuple(sorted({v for v in col if v is not None}))
                if not vocab:
                    raise ValueError(f"column {spec.name!r} has no values to build a vocabulary")
                self.vocabularies_[spec.name] = vocab
            elif directive == "minmax":
                finite = col[np.isfinite(col)]
                lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
                self.ranges_[spec.name] = (lo, hi)
            width = len(vocab) if directive == "onehot" else 1
            blocks.append(Block(spec.name, directive, start, width, vocab))
            start += width
        self.blocks_ = tuple(blocks)
        self.class_names_ = tuple(sorted({v for v in ds.labels if v is not None}))
        names = []
        for b in self.blocks_:
            if b.directive == "onehot":
                names += [f"{b.source}={tok}" for tok in b.vocabulary]
            else:
                names.append(b.source)
        self.feature_names_out_ = tuple(names)
        return self

    @property
    def n_features_out(self) -> int:
        check_is_fitted(self, "blocks_")
        return self.blocks_[-1].stop if self.blocks_ else 0

    def _check_schema(self, schema):
        if tuple(schema) != tuple(self.schema_):
            raise ValueError("dataset schema does not match the fitted encoder")

    def encode_labels(self, labels) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.class_names_)}
        try:
            return np.array([index[lab] for lab in labels], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} was not seen during fit") from None

    def transform(self, ds: TabularDataset) -> FeatureMatrix:
        check_is_fitted(self, "blocks_")
        self._check_schema(ds.schema)
        n = len(ds)
        out = np.zeros((n, self.n_features_out), dtype=np.float64)
        for b in self.blocks_:
            col = ds.columns[b.source]
            if b.directive in ("onehot", "ordinal"):
                index = {tok: i for i, tok in enumerate(b.vocabulary)}
                codes = np.array([index.get(v, len(b.vocabulary)) for v in col], dtype=np.int64)
                if b.directive == "ordinal":
                    out[:, b.start] = codes
                else:
                    seen = codes < b.width
                    out[np.flatnonzero(seen), b.start + codes[seen]] = 1.0
            elif b.directive == "minmax":
                lo, hi = self.ranges_[b.source]
                out[:, b.start] = (col - lo) / (hi - lo) if hi > lo else 0.0
            else:
                out[:, b.start] = col
        if not np.isfinite(out).all():
            raise ValueError("encoded matrix contains NaN/Inf; clean the dataset first")
        return FeatureMatrix(
            out, self.feature_names_out_, self.encode_labels(ds.labels),
            self.class_names_, self.blocks_,
        )

    def inverse_transform(self, m: FeatureMatrix) -> TabularDataset:
        check_is_fitted(self, "blocks_")
        values = np.asarray(m.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.n_features_out:
            raise ValueError(
                f"matrix has {values.shape[-1]} columns, encoder layout has {self.n_features_out}"
            )
        columns: dict[str, np.ndarray] = {}
        for b in self.blocks_:
            block = values[:, b.start:b.stop]
            if b.directive == "onehot":
                idx = np.argmax(block, axis=1)
                columns[b.source] = np.array(b.vocabulary, dtype=object)[idx]
            elif b.directive == "ordinal":
                idx = np.clip(np.rint(block[:, 0]), 0, len(b.vocabulary) - 1).astype(np.int64)
                columns[b.source] = np.array(b.vocabulary, dtype=object)[idx]
            elif b.directive == "minmax":
                lo, hi = self.ranges_[b.source]
                columns[b.source] = block[:, 0] * (hi - lo) + lo if hi > lo else np.full(len(block), lo)
            else:
                columns[b.source] = block[:, 0].copy()
        labels = np.array([m.class_names[i] for i in m.class_ids], dtype=object)
        return TabularDataset(self.schema_, columns, labels, provenance="inverse_transform")

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "blocks_")
        return {
            "format": ENCODER_FORMAT,
            "schema": [[s.name, s.kind, s.position] for s in self.schema_],
            "plan": self.plan_,
            "vocabularies": {k: list(v) for k, v in self.vocabularies_.items()},
            "ranges": {k: list(v) for k, v in self.ranges_.items()},
            "class_names": list(self.class_names_),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularEncoder":
        if doc.get("format") != ENCODER_FORMAT:
            raise ValueError(f"unsupported encoder document format {doc.get('format')!r}")
        schema = tuple(ColumnSpec(n, k, p) for n, k, p in doc["schema"])
        enc = cls(plan=doc["plan"])
        enc.schema_ = schema
        enc.plan_ = dict(doc["plan"])
        enc.vocabularies_ = {k: tuple(v) for k, v in doc["vocabularies"].items()}
        enc.ranges_ = {k: tuple(v) for k, v in doc["ranges"].items()}
        enc.class_names_ = tuple(doc["class_names"])
        blocks, names, start = [], [], 0
        for spec in schema:
            if spec.kind == "label":
                continue
            directive = enc.plan_[spec.name]
            vocab = enc.vocabularies_.get(spec.name, ())
            width = len(vocab) if directive == "onehot" else 1
            blocks.append(Block(spec.name, directive, start, width, vocab))
            names += [f"{spec.name}={t}" for t in vocab] if directive == "onehot" else [spec.name]
            start += width
        enc.blocks_ = tuple(blocks)
        enc.feature_names_out_ = tuple(names)
        return enc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TabularEncoder":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitIndices":
        return cls(*(np.asarray(doc[k], dtype=np.int64) for k in ("train", "val", "test")), seed=doc["seed"])


def allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` rows; ties favour earlier partitions."""
    exact = [n * r for r in ratios]
    counts = [math.floor(e + 1e-9) for e in exact]
    left = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratified_split(
    class_ids,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> SplitIndices:
    """Per-class seeded shuffle followed by a train/val/test cut.

    ``class_ids`` may be a :class:`FeatureMatrix` or an integer array.
    Returned index arrays are sorted.
    """
    if isinstance(class_ids, FeatureMatrix):
        class_ids = class_ids.class_ids
    class_ids = np.asarray(class_ids)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(class_ids):
        idx = np.flatnonzero(class_ids == cls)
        if len(idx) < 3:
            warnings.warn(f"class {cls} has {len(idx)} rows; all assigned to train", stacklevel=2)
            parts[0].append(idx)
            continue
        idx = rng.permutation(idx)
        n_train, n_val, _ = allocate(len(idx), ratios)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    train, val, test = (
        np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64) for p in parts
    )
    return SplitIndices(train.astype(np.int64), val.astype(np.int64), test.astype(np.int64), seed)
