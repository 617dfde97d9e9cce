"""Per-class, per-feature summary statistics for exploratory plots.

Quartiles use linear interpolation between order statistics (numpy's
``"linear"`` method, Hyndman & Fan type 7). Histograms use 20 equal-width
bins spanning the feature's range over all rows passed in, so bars from
different classes line up.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

N_BINS = 20


@dataclass(frozen=True)
class FeatureSummary:
    class_name: str
    feature: str
    count: int
    mean: float
    variance: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    bin_edges: tuple[float, ...]
    hist: tuple[int, ...]

    def as_row(self) -> list:
        return [
            self.class_name, self.feature, self.count, repr(self.mean), repr(self.variance),
            repr(self.min), repr(self.q1), repr(self.median), repr(self.q3), repr(self.max),
            " ".join(repr(e) for e in self.bin_edges), " ".join(str(c) for c in self.hist),
        ]


CSV_HEADER = [
    "class", "feature", "count", "mean", "variance", "min", "q1", "median", "q3", "max",
    "bin_edges", "hist",
]


def summarize(values: np.ndarray, class_name: str, feature: str, value_range: tuple[float, float]) -> FeatureSummary:
    values = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(values, [25, 50, 75], method="linear")
    counts, edges = np.histogram(values, bins=N_BINS, range=value_range)
    return FeatureSummary(
        class_name, feature, int(values.size), float(values.mean()), float(values.var()),
        float(values.min()), float(q1), float(med), float(q3), float(values.max()),
        tuple(float(e) for e in edges), tuple(int(c) for c in counts),
    )


def _feature_index(fm, features) -> list[int]:
    out = []
    for f in features:
        if isinstance(f, (int, np.integer)):
            if not 0 <= f < len(fm.feature_names):
                raise KeyError(f"feature index {f} out of range")
            out.append(int(f))
        else:
            try:
                out.append(fm.feature_names.index(f))
            except ValueError:
                raise KeyError(f"unknown feature {f!r}") from None
    return out


def _range(col: np.ndarray) -> tuple[float, float]:
    return (float(col.min()), float(col.max())) if col.size else (0.0, 1.0)


def feature_summaries(fm, features: Sequence | None = None, classes: Sequence[str] | None = None) -> list[FeatureSummary]:
    """Summaries for every (class, feature) pair, classes in the given order.

    ``None`` selects everything. Classes with no rows are skipped.
    """
    feat_idx = _feature_index(fm, features) if features is not None else list(range(len(fm.feature_names)))
    class_list = list(classes) if classes is not None else list(fm.class_names)
    if not feat_idx or not class_list:
        raise ValueError("feature and class selections must be non-empty")
    for name in class_list:
        if name not in fm.class_names:
            raise KeyError(f"unknown class {name!r}")
    out = []
    for name in class_list:
        mask = fm.class_ids == fm.class_names.index(name)
        if not mask.any():
            continue
        for j in feat_idx:
            col = fm.values[:, j]
            out.append(summarize(col[mask], name, fm.feature_names[j], _range(col)))
    return out


@dataclass(frozen=True)
class PairedSummary:
    feature: str
    real: FeatureSummary
    synthetic: FeatureSummary

    @property
    def abs_mean_diff(self) -> float:
        return abs(self.real.mean - self.synthetic.mean)


def real_vs_synthetic_summary(real: np.ndarray, synthetic: np.ndarray, feature_names: Sequence[str], class_name: str) -> list[PairedSummary]:
    """Side-by-side summaries of real and generated rows of one class; both use
    bins spanning the union of their ranges."""
    real = np.asarray(real, dtype=np.float64)
    synthetic = np.asarray(synthetic, dtype=np.float64)
    if real.ndim != 2 or synthetic.ndim != 2 or real.shape[1] != synthetic.shape[1] or real.shape[1] != len(feature_names):
        raise ValueError("real and synthetic rows must share the feature layout")
    out = []
    for j, name in enumerate(feature_names):
        both = np.concatenate([real[:, j], synthetic[:, j]])
        rng = _range(both)
        out.append(PairedSummary(
            name,
            summarize(real[:, j], class_name, name, rng),
            summarize(synthetic[:, j], class_name, name, rng),
        ))
    return out


def summaries_csv(summaries: Sequence[FeatureSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in summaries:
        w.writerow(s.as_row())
    return buf.getvalue()


def paired_csv(pairs: Sequence[PairedSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", *CSV_HEADER, "abs_mean_diff"])
    for p in pairs:
        w.writerow(["real", *p.real.as_row(), repr(p.abs_mean_diff)])
        w.writerow(["synthetic", *p.synthetic.as_row(), repr(p.abs_mean_diff)])
    return buf.getvalue()
