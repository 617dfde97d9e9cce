"""NSL-KDD intrusion classification with second-order boosted trees,
isolation-forest anomaly scoring and per-class GAN augmentation."""

from .evaluation import ClassMetrics, ConfusionMatrix, compare, confusion, metrics
from .gan import TabularGAN, augment, default_targets
from .gbt import BoostedTreesClassifier, train, tune
from .ingest import TabularDataset, clean, map_labels, parse_nslkdd, read_nslkdd
from .isoforest import IsoForest, class_anomaly_ranking
from .preprocess import FeatureMatrix, TabularEncoder, stratified_split

__version__ = "0.1.0"

__all__ = [
    "BoostedTreesClassifier", "ClassMetrics", "ConfusionMatrix", "FeatureMatrix", "IsoForest",
    "TabularDataset", "TabularEncoder", "TabularGAN", "augment", "class_anomaly_ranking", "clean",
    "compare", "confusion", "default_targets", "map_labels", "metrics", "parse_nslkdd",
    "read_nslkdd", "stratified_split", "train", "tune",
]
