"""Unsupervised opinion summarization workbench.

Pipeline: ingest reviews -> fit language model / chunker / topic model ->
synthesize noisy(input, clean target) pairs -> train a denoising
encoder-decoder summarizer -> decode and score summaries with ROUGE.
"""

from .config import PipelineConfig
from .corpus import Corpus, IdfTable, Review, Vocabulary, build_vocab, compute_idf, tokenize
from .errors import ConfigError, DataError, NumericError, OpsumError, ShapeError
from .metrics import MetricReport, MetricScore, rouge, score_corpus
from .model import DenoisingSummarizer, ModelConfig
from .noising import NoiseConfig, SummaryFilter, SyntheticPair, build_synthetic_dataset
from .training import TrainConfig, pretrain_lm, train_model

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Review", "Vocabulary", "IdfTable", "build_vocab", "compute_idf",
    "tokenize", "MetricScore", "MetricReport", "rouge", "score_corpus",
    "NoiseConfig", "SummaryFilter", "SyntheticPair", "build_synthetic_dataset",
    "ModelConfig", "DenoisingSummarizer", "TrainConfig", "train_model",
    "pretrain_lm", "PipelineConfig", "OpsumError", "ConfigError", "DataError",
    "NumericError", "ShapeError", "__version__",
]
