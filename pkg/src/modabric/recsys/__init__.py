"""Hybrid recommender: collaborative + content item vectors trained with WMRB."""
from .features import ItemFeatures, build_item_features, normalize_features
from .model import (
    MODES, WMRB_EPS, RecModel, RecTrainConfig, ScoredItem, build_rec_model, popularity_ranking, resolve_mode,
)
from .train import (
    SKIP, CustomerTimeline, RankingSummary, RecHistory, candidate_items, evaluate_ranking, sample_negatives,
    sample_training_instance, timelines, train_rec, validation_customers,
)

__all__ = [
    "MODES", "SKIP", "WMRB_EPS", "CustomerTimeline", "ItemFeatures", "RankingSummary", "RecHistory", "RecModel",
    "RecTrainConfig", "ScoredItem", "build_item_features", "build_rec_model", "candidate_items",
    "evaluate_ranking", "normalize_features", "popularity_ranking", "resolve_mode", "sample_negatives",
    "sample_training_instance", "timelines", "train_rec", "validation_customers",
]
