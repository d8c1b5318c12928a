"""ctikit: multilingual threat-intelligence feeds, from raw text to events.

Ingest feed records, detect languages, preprocess per language, produce
silver BIO labels, train a BiGRU-CRF sequence labeler over pluggable token
embeddings, and assemble decoded labels into event records.
"""

__version__ = "0.1.0"

from .annotate import LabelSchema, Span, TaggedSequence
from .embed import EmbedderConfig
from .evaluate import EvalReport, span_prf
from .ingest import IngestReport, RawFeedRecord, SourceConfig
from .langid import LanguageProfile, LanguageVerdict, detect_language, train_profiles
from .model import SequenceModel, TrainConfig, train
from .preprocess import LanguageResources, PreprocessedDoc, Token

__all__ = [
    "EmbedderConfig",
    "EvalReport",
    "IngestReport",
    "LabelSchema",
    "LanguageProfile",
    "LanguageResources",
    "LanguageVerdict",
    "PreprocessedDoc",
    "RawFeedRecord",
    "SequenceModel",
    "SourceConfig",
    "Span",
    "TaggedSequence",
    "Token",
    "TrainConfig",
    "__version__",
    "detect_language",
    "span_prf",
    "train",
    "train_profiles",
]
