"""Ingestion, vocabularies, temporal splitting and synthetic data."""
from .catalogue import (
    ABSENT, Batch, CatalogueArrays, CatalogueEntry, MetaVocab, ProductRecord, Rejection, TaskDef,
    encode_records, load_catalogue, load_taxonomy, save_taxonomy,
)
from .interactions import (
    InteractionLog, InteractionSet, Windows, load_interactions, temporal_split, write_interactions,
)
from .synthetic import SynthSpec, generate_synthetic, write_synthetic
from .vocab import PAD, UNK, Vocabulary, build_vocab, split_tokens, tokenize

__all__ = [
    "ABSENT", "Batch", "CatalogueArrays", "CatalogueEntry", "InteractionLog", "InteractionSet",
    "MetaVocab", "PAD", "ProductRecord", "Rejection", "SynthSpec", "TaskDef", "UNK", "Vocabulary",
    "Windows", "build_vocab", "encode_records", "generate_synthetic", "load_catalogue",
    "load_interactions", "load_taxonomy", "save_taxonomy", "split_tokens", "temporal_split",
    "tokenize", "write_interactions", "write_synthetic",
]
