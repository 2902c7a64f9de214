"""Rationale-augmented multimodal aspect-based sentiment analysis."""

from .codec import AspectTriple, Sentiment, decode_indices, encode_triples
from .data import MultimodalExample, read_corpus, write_corpus
from .model import LRSAModel, ModelConfig, Vocabulary, apply_ablation, load_checkpoint, save_checkpoint

__all__ = [
    "AspectTriple",
    "LRSAModel",
    "ModelConfig",
    "MultimodalExample",
    "Sentiment",
    "Vocabulary",
    "apply_ablation",
    "decode_indices",
    "encode_triples",
    "load_checkpoint",
    "read_corpus",
    "save_checkpoint",
    "write_corpus",
]
